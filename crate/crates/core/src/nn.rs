//! Dense layers and fixed-topology feed-forward stacks with a hand-written backward pass.
//!
//! Weights are stored `in × out` so a batch `X[batch × in]` maps to `X·W + b`.
//! A stack keeps the per-layer inputs and pre-activations of a forward pass in a
//! [`ForwardTrace`], which is all the backward pass needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::optim::{sgd_step, sgd_step_vec};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    #[default]
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Linear,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
    ];

    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => z,
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation `z`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
        }
    }

    pub fn forward<T: Scalar>(self, z: &Matrix<T>) -> Matrix<T> {
        match self {
            Activation::Linear => z.clone(),
            _ => z.map(|v| self.apply(v)),
        }
    }

    /// `upstream ⊙ f'(z)`.
    pub fn backward<T: Scalar>(self, z: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            Activation::Linear => {
                if z.shape() != upstream.shape() {
                    return Err(SitError::Dimension {
                        op: "activation_backward",
                        left: z.shape(),
                        right: upstream.shape(),
                    });
                }
                Ok(upstream.clone())
            }
            _ => z.zip_map(upstream, |zv, g| g * self.derivative(zv)),
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(SitError::arg(format!(
                "layer dims must be >= 1, got {}x{}",
                self.in_dim, self.out_dim
            )));
        }
        Ok(())
    }
}

/// `out[i,j] = Σ_k x[i,k]·W[k,j] + b[j]`.
pub fn affine_forward<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Result<Matrix<T>> {
    if b.len() != w.cols() {
        return Err(SitError::Dimension {
            op: "affine_forward bias",
            left: w.shape(),
            right: (1, b.len()),
        });
    }
    x.matmul(w)?.add_row_vector(b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    /// Glorot-uniform weights in `±sqrt(6/(in+out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
        let weights = Matrix::from_fn(spec.in_dim, spec.out_dim, |_, _| {
            T::lit(rng.random_range(-limit..limit))
        });
        Ok(Dense {
            weights,
            bias: vec![T::zero(); spec.out_dim],
            activation: spec.activation,
        })
    }

    pub fn from_parts(weights: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(SitError::Dimension {
                op: "dense bias",
                left: weights.shape(),
                right: (1, bias.len()),
            });
        }
        Ok(Dense {
            weights,
            bias,
            activation,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.weights.rows(), self.weights.cols(), self.activation)
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Gradient of a scalar loss with respect to one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerGrad<T> {
    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: T) -> LayerGrad<T> {
        LayerGrad {
            weights: self.weights.scale(s),
            bias: self.bias.iter().map(|&b| b * s).collect(),
        }
    }
}

/// Cached intermediate values of one forward pass through an [`Mlp`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Input to each layer.
    pub inputs: Vec<Matrix<T>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Matrix<T>>,
    pub output: Matrix<T>,
}

/// An ordered stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Wraps layers, checking that consecutive widths chain.
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(SitError::LayerShape {
                    group: "stack",
                    layer: i + 1,
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs.iter().map(|&s| Dense::init(s, rng)).collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn empty() -> Self {
        Mlp { layers: Vec::new() }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Dense<T>> {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(Dense::in_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(Dense::out_dim)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Dense::spec).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Concatenates two stacks (`self` first).
    pub fn chain(&self, other: &Mlp<T>) -> Result<Mlp<T>> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        Mlp::new(layers)
    }

    /// Splits into `layers[..at]` and `layers[at..]`.
    pub fn split_at(&self, at: usize) -> (Mlp<T>, Mlp<T>) {
        let (a, b) = self.layers.split_at(at.min(self.layers.len()));
        (Mlp { layers: a.to_vec() }, Mlp { layers: b.to_vec() })
    }

    fn check_input(&self, x: &Matrix<T>, group: &'static str) -> Result<()> {
        if let Some(first) = self.layers.first() {
            if first.in_dim() != x.cols() {
                return Err(SitError::LayerShape {
                    group,
                    layer: 0,
                    expected: first.in_dim(),
                    found: x.cols(),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.forward_named(x, "stack")
    }

    /// Forward pass whose dimension errors name `group`.
    pub fn forward_named(&self, x: &Matrix<T>, group: &'static str) -> Result<Matrix<T>> {
        self.check_input(x, group)?;
        let mut a = x.clone();
        for layer in &self.layers {
            let z = affine_forward(&a, &layer.weights, &layer.bias)?;
            a = layer.activation.forward(&z);
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &Matrix<T>) -> Result<ForwardTrace<T>> {
        self.check_input(x, "stack")?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = affine_forward(&a, &layer.weights, &layer.bias)?;
            let next = layer.activation.forward(&z);
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(ForwardTrace { inputs, pre, output: a })
    }

    /// Backpropagates `upstream = ∂L/∂output` through the stack.
    ///
    /// Returns per-layer gradients (in layer order) and `∂L/∂input`.
    pub fn backward(&self, trace: &ForwardTrace<T>, upstream: &Matrix<T>) -> Result<(Vec<LayerGrad<T>>, Matrix<T>)> {
        if trace.pre.len() != self.layers.len() {
            return Err(SitError::arg("forward trace does not belong to this stack"));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let dz = layer.activation.backward(&trace.pre[i], &delta)?;
            let dw = trace.inputs[i].matmul_tn(&dz)?;
            let db = dz.column_sums();
            delta = dz.matmul_nt(&layer.weights)?;
            grads.push(LayerGrad { weights: dw, bias: db });
        }
        grads.reverse();
        Ok((grads, delta))
    }

    /// Plain SGD on every layer.
    pub fn apply_grads(&mut self, grads: &[LayerGrad<T>], mu: T) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(SitError::arg(format!(
                "{} gradients for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weights = sgd_step(&layer.weights, &g.weights, mu)?;
            layer.bias = sgd_step_vec(&layer.bias, &g.bias, mu)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.cast(),
                    bias: l.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
