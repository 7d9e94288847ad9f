//! The three networks of speaker-invariant training and the gradient reversal joining them.
//!
//! ```text
//!            ┌──────────── senone classifier ──▶ p(q | x)
//!  x ─▶ feature extractor ─▶ F
//!            └── GRL ──── speaker classifier ─▶ p(a | x)
//! ```
//!
//! The feature extractor is the bottom `n_h` layers of the acoustic stack; the
//! senone classifier is the rest of it, output layer included. The gradient
//! reversal has no parameters and no forward computation: `F` flows unchanged
//! into the speaker classifier, and on the way back [`grl_backward`] scales the
//! speaker gradient by `−λ` before it reaches the feature extractor.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::loss::{softmax_rows, LossReduction};
use crate::nn::{Activation, LayerSpec, Mlp};
use crate::scalar::Scalar;

/// Layer widths of the acoustic stack (feature extractor followed by senone classifier).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticTopology {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_senones: usize,
    pub activation: Activation,
}

impl Default for AcousticTopology {
    fn default() -> Self {
        AcousticTopology {
            input_dim: 65,
            hidden: vec![64; 4],
            n_senones: 20,
            activation: Activation::Relu,
        }
    }
}

impl AcousticTopology {
    /// 957-d spliced input, 7 hidden layers of 2048, 3012 senones.
    pub fn full_scale() -> Self {
        AcousticTopology {
            input_dim: 957,
            hidden: vec![2048; 7],
            n_senones: 3012,
            activation: Activation::Relu,
        }
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden.len()
    }

    /// Hidden layers use `activation`; the output layer is linear and feeds a softmax.
    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            specs.push(LayerSpec::new(prev, w, self.activation));
            prev = w;
        }
        specs.push(LayerSpec::new(prev, self.n_senones, Activation::Linear));
        specs
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(SitError::config("acoustic.input_dim", "must be >= 1"));
        }
        if self.n_senones == 0 {
            return Err(SitError::config("acoustic.n_senones", "must be >= 1"));
        }
        if self.hidden.len() < 2 {
            return Err(SitError::config(
                "acoustic.hidden",
                "need at least 2 hidden layers to split into extractor and classifier",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(SitError::config("acoustic.hidden", "widths must be >= 1"));
        }
        Ok(())
    }
}

/// Hidden widths of the speaker classifier; its input is the deep feature.
///
/// The desk-scale default is wider than the feature and uses tanh: a narrow
/// relu adversary loses its active units under the reversed gradient and then
/// stops constraining the extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakerTopology {
    pub hidden: Vec<usize>,
    pub n_speakers: usize,
    pub activation: Activation,
}

impl Default for SpeakerTopology {
    fn default() -> Self {
        SpeakerTopology {
            hidden: vec![128; 2],
            n_speakers: 8,
            activation: Activation::Tanh,
        }
    }
}

impl SpeakerTopology {
    /// 2 hidden layers of 512, 87 speakers.
    pub fn full_scale() -> Self {
        SpeakerTopology {
            hidden: vec![512; 2],
            n_speakers: 87,
            activation: Activation::Relu,
        }
    }

    pub fn specs(&self, feature_dim: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = feature_dim;
        for &w in &self.hidden {
            specs.push(LayerSpec::new(prev, w, self.activation));
            prev = w;
        }
        specs.push(LayerSpec::new(prev, self.n_speakers, Activation::Linear));
        specs
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(SitError::config("speaker.n_speakers", "need at least 2 speakers"));
        }
        if self.hidden.contains(&0) {
            return Err(SitError::config("speaker.hidden", "widths must be >= 1"));
        }
        Ok(())
    }
}

/// Adversarial weight as a function of the epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// Linear ramp from 0 to λ over the first `epochs` epochs.
    LinearWarmup { epochs: usize },
}

impl LambdaSchedule {
    pub fn lambda_at(&self, lambda: f64, epoch: usize) -> f64 {
        match *self {
            LambdaSchedule::Constant => lambda,
            LambdaSchedule::LinearWarmup { epochs } if epoch < epochs => {
                lambda * (epoch as f64 + 1.0) / (epochs as f64 + 1.0)
            }
            LambdaSchedule::LinearWarmup { .. } => lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Weight of the reversed speaker gradient.
    pub lambda: f64,
    /// SGD learning rate.
    pub mu: f64,
    /// Depth of the feature extractor (layers of the acoustic stack before `F`).
    pub n_h: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reduction: LossReduction,
    pub lambda_schedule: LambdaSchedule,
    /// Epochs spent fitting the speaker classifier on frozen features before
    /// adversarial updates begin.
    pub speaker_pretrain_epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 3.0,
            mu: 0.002,
            n_h: 2,
            batch_size: 64,
            epochs: 30,
            seed: 17,
            reduction: LossReduction::Sum,
            lambda_schedule: LambdaSchedule::Constant,
            speaker_pretrain_epochs: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, hidden_layers: usize) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(SitError::config("hyper.lambda", "must be finite and >= 0"));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(SitError::config("hyper.mu", "must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(SitError::config("hyper.batch_size", "must be >= 1"));
        }
        check_split_depth(self.n_h, hidden_layers).map_err(|_| {
            SitError::config(
                "hyper.n_h",
                format!("must lie in 1..={}", hidden_layers.saturating_sub(1)),
            )
        })
    }
}

fn check_split_depth(n_h: usize, hidden_layers: usize) -> Result<()> {
    if n_h == 0 || n_h + 1 > hidden_layers {
        return Err(SitError::arg(format!(
            "n_h = {n_h} outside 1..={} for {hidden_layers} hidden layers",
            hidden_layers.saturating_sub(1)
        )));
    }
    Ok(())
}

/// `F = M_f(x)`: forward through the feature extractor.
pub fn feature_extract<T: Scalar>(x: &Matrix<T>, theta_f: &Mlp<T>) -> Result<Matrix<T>> {
    theta_f.forward_named(x, "feature extractor")
}

/// `p(q | x) = softmax(M_y(F))`.
pub fn senone_posteriors<T: Scalar>(features: &Matrix<T>, theta_y: &Mlp<T>) -> Result<Matrix<T>> {
    Ok(softmax_rows(&theta_y.forward_named(features, "senone classifier")?))
}

/// `p(a | x) = softmax(M_s(F))`. `F` enters unchanged: the reversal is identity going forward.
pub fn speaker_posteriors<T: Scalar>(features: &Matrix<T>, theta_s: &Mlp<T>) -> Result<Matrix<T>> {
    Ok(softmax_rows(&theta_s.forward_named(features, "speaker classifier")?))
}

/// Backward rule of the gradient reversal: `−λ · upstream`.
pub fn grl_backward<T: Scalar>(upstream: &Matrix<T>, lambda: T) -> Matrix<T> {
    let coeff = -lambda;
    upstream.map(|g| coeff * g)
}

/// Feature extractor plus senone classifier: everything used at recognition time.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticModel<T> {
    pub feature: Mlp<T>,
    pub senone: Mlp<T>,
}

impl<T: Scalar> AcousticModel<T> {
    pub fn new(feature: Mlp<T>, senone: Mlp<T>) -> Result<Self> {
        match (feature.output_dim(), senone.input_dim()) {
            (Some(f), Some(s)) if f == s => Ok(AcousticModel { feature, senone }),
            (Some(f), Some(s)) => Err(SitError::LayerShape {
                group: "senone classifier",
                layer: 0,
                expected: f,
                found: s,
            }),
            _ => Err(SitError::arg(
                "feature extractor and senone classifier must be non-empty",
            )),
        }
    }

    pub fn n_h(&self) -> usize {
        self.feature.len()
    }

    pub fn input_dim(&self) -> usize {
        self.feature.input_dim().unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.output_dim().unwrap_or(0)
    }

    pub fn n_senones(&self) -> usize {
        self.senone.output_dim().unwrap_or(0)
    }

    /// Total layers in the combined stack.
    pub fn depth(&self) -> usize {
        self.feature.len() + self.senone.len()
    }

    pub fn deep_features(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        feature_extract(x, &self.feature)
    }

    pub fn logits(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.senone.forward_named(&self.deep_features(x)?, "senone classifier")
    }

    pub fn posteriors(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        senone_posteriors(&self.deep_features(x)?, &self.senone)
    }

    /// Re-joins both parts into a single stack.
    pub fn stack(&self) -> Mlp<T> {
        self.feature
            .chain(&self.senone)
            .expect("boundary widths were checked at construction")
    }

    pub fn is_finite(&self) -> bool {
        self.feature.is_finite() && self.senone.is_finite()
    }

    pub fn cast<U: Scalar>(&self) -> AcousticModel<U> {
        AcousticModel {
            feature: self.feature.cast(),
            senone: self.senone.cast(),
        }
    }
}

/// Splits a trained single-stack model after its first `n_h` layers.
///
/// Values are moved over unchanged, so the split model computes exactly what
/// the original did.
pub fn split_pretrained<T: Scalar>(si_model: &Mlp<T>, n_h: usize) -> Result<AcousticModel<T>> {
    let hidden_layers = si_model.len().saturating_sub(1);
    check_split_depth(n_h, hidden_layers)?;
    let (feature, senone) = si_model.split_at(n_h);
    AcousticModel::new(feature, senone)
}

/// All three parameter groups of a speaker-invariant model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub acoustic: AcousticModel<T>,
    pub speaker: Mlp<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(acoustic: AcousticModel<T>, speaker: Mlp<T>) -> Result<Self> {
        if speaker.input_dim() != Some(acoustic.feature_dim()) {
            return Err(SitError::LayerShape {
                group: "speaker classifier",
                layer: 0,
                expected: acoustic.feature_dim(),
                found: speaker.input_dim().unwrap_or(0),
            });
        }
        Ok(ModelParams { acoustic, speaker })
    }

    pub fn feature(&self) -> &Mlp<T> {
        &self.acoustic.feature
    }

    pub fn senone(&self) -> &Mlp<T> {
        &self.acoustic.senone
    }

    pub fn n_speakers(&self) -> usize {
        self.speaker.output_dim().unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.acoustic.is_finite() && self.speaker.is_finite()
    }
}
