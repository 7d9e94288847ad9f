//! Softmax and cross-entropy, fused in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// How per-frame losses are combined over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// `Σ_i ℓ_i`, the literal batch objective.
    #[default]
    Sum,
    /// `(1/N) Σ_i ℓ_i`, for learning rates that do not scale with batch size.
    Mean,
}

impl LossReduction {
    pub(crate) fn factor<T: Scalar>(self, n: usize) -> T {
        match self {
            LossReduction::Sum => T::one(),
            LossReduction::Mean => T::one() / T::from_count(n.max(1)),
        }
    }
}

fn max_of<T: Scalar>(z: &[T]) -> T {
    z.iter().copied().fold(T::neg_infinity(), T::max)
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Result<Vec<T>> {
    if z.is_empty() {
        return Err(SitError::arg("softmax of an empty vector"));
    }
    let m = max_of(z);
    let exps: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = max_of(row);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `log Σ_j exp(z_j − max)`, so that `log softmax(z)_k = z_k − max − lse`.
fn shifted_log_sum_exp<T: Scalar>(z: &[T], m: T) -> T {
    z.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(SitError::arg(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = max_of(logits);
    // both terms are >= 0, so the loss never goes negative through rounding
    Ok(shifted_log_sum_exp(logits, m) + (m - logits[label]))
}

/// Loss and its gradient `softmax(logits) − onehot(label)`.
pub fn cross_entropy_grad<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    let loss = cross_entropy(logits, label)?;
    let mut grad = softmax(logits)?;
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Batch cross-entropy over logit rows, returning the reduced loss and `∂loss/∂logits`.
pub fn batch_cross_entropy<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    reduction: LossReduction,
) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(SitError::Dimension {
            op: "batch_cross_entropy labels",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    let factor: T = reduction.factor(labels.len());
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let (loss, g) = cross_entropy_grad(logits.row(i), label)?;
        total += loss;
        for (d, v) in grad.row_mut(i).iter_mut().zip(g) {
            *d = v * factor;
        }
    }
    Ok((total * factor, grad))
}

/// Batch cross-entropy value only.
pub fn batch_cross_entropy_loss<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    reduction: LossReduction,
) -> Result<T> {
    if labels.len() != logits.rows() {
        return Err(SitError::Dimension {
            op: "batch_cross_entropy labels",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        total += cross_entropy(logits.row(i), label)?;
    }
    Ok(total * reduction.factor(labels.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        // exp(z_i)/Σ exp(z_j) evaluated directly
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (pi, ei) in p.iter().zip(&e) {
            assert!((pi - ei / s).abs() < 1e-15);
        }
        assert!((p[0] - 0.09003).abs() < 1e-5);
        assert!((p[1] - 0.24473).abs() < 1e-5);
        assert!((p[2] - 0.66524).abs() < 1e-5);
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = cross_entropy(&[0.5f64; 4], 2).unwrap();
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        let mut peaked = [0.0f64; 5];
        peaked[3] = 30.0;
        assert!(cross_entropy(&peaked, 3).unwrap() < 1e-12);
        let direct = -(1f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let ce = cross_entropy(&[1.0f64, 2.0, 3.0], 0).unwrap();
        assert!((ce - direct).abs() < 1e-12);
        assert!((ce - 2.40761).abs() < 1e-5);
        assert!(cross_entropy(&[1.0f64, 2.0], 2).is_err());
    }

    #[test]
    fn batch_modes_differ_by_batch_size() {
        let logits = Matrix::from_rows(&[[1.0f64, 0.0], [0.0, 2.0], [0.5, 0.5]]).unwrap();
        let labels = [0, 1, 0];
        let (s, gs) = batch_cross_entropy(&logits, &labels, LossReduction::Sum).unwrap();
        let (m, gm) = batch_cross_entropy(&logits, &labels, LossReduction::Mean).unwrap();
        assert!((s / 3.0 - m).abs() < 1e-15);
        assert!((gs.get(1, 1) / 3.0 - gm.get(1, 1)).abs() < 1e-15);
        let frame_sum: f64 = (0..3).map(|i| cross_entropy(logits.row(i), labels[i]).unwrap()).sum();
        assert_eq!(s, frame_sum);
    }

    proptest! {
        #[test]
        fn softmax_normalizes_and_is_shift_invariant(
            z in prop::collection::vec(-1e3f64..1e3, 1..12),
            c in -50.0f64..50.0,
        ) {
            let p = softmax(&z).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn cross_entropy_is_non_negative(
            z in prop::collection::vec(-1e3f64..1e3, 1..12),
            pick in 0usize..12,
        ) {
            let label = pick % z.len();
            prop_assert!(cross_entropy(&z, label).unwrap() >= 0.0);
        }
    }
}
