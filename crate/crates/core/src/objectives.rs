//! Batch losses of speaker-invariant training and their analytic gradients.
//!
//! * senone loss `L_y = −Σ_i log p(y_i | x_i)` over `(θ_f, θ_y)`
//! * speaker loss `L_s = −Σ_i log p(s_i | x_i)` over `(θ_f, θ_s)`
//! * total `L = L_y − λ·L_s`
//!
//! The functions here evaluate each branch on its own. [`staged_gradients`]
//! assembles the three update directions from those independent evaluations and
//! serves as the reference the fused single-pass step in the trainer is checked
//! against.

use serde::Serialize;

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::loss::{batch_cross_entropy, batch_cross_entropy_loss, LossReduction};
use crate::model::{feature_extract, ModelParams};
use crate::nn::{LayerGrad, Mlp};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown<T> {
    pub senone_loss: T,
    pub speaker_loss: T,
    pub total_loss: T,
    pub lambda: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn new(senone_loss: T, speaker_loss: T, lambda: T) -> Self {
        LossBreakdown {
            senone_loss,
            speaker_loss,
            total_loss: total_loss(senone_loss, speaker_loss, lambda),
            lambda,
        }
    }

    /// Senone-only objective (no speaker branch).
    pub fn senone_only(senone_loss: T) -> Self {
        LossBreakdown {
            senone_loss,
            speaker_loss: T::zero(),
            total_loss: senone_loss,
            lambda: T::zero(),
        }
    }
}

/// `L_senone − λ·L_speaker`.
pub fn total_loss<T: Scalar>(senone_loss: T, speaker_loss: T, lambda: T) -> T {
    senone_loss - lambda * speaker_loss
}

fn check_labels(labels: &[usize], classes: usize, what: &str) -> Result<()> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(SitError::arg(format!(
            "{what} label {l} at frame {i} out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn branch_loss<T: Scalar>(
    x: &Matrix<T>,
    labels: &[usize],
    theta_f: &Mlp<T>,
    head: &Mlp<T>,
    reduction: LossReduction,
    what: &str,
) -> Result<T> {
    check_labels(labels, head.output_dim().unwrap_or(0), what)?;
    let f = feature_extract(x, theta_f)?;
    let logits = head.forward(&f)?;
    batch_cross_entropy_loss(&logits, labels, reduction)
}

/// `L_senone(θ_f, θ_y)`.
pub fn senone_loss<T: Scalar>(
    x: &Matrix<T>,
    senones: &[usize],
    theta_f: &Mlp<T>,
    theta_y: &Mlp<T>,
    reduction: LossReduction,
) -> Result<T> {
    branch_loss(x, senones, theta_f, theta_y, reduction, "senone")
}

/// `L_speaker(θ_f, θ_s)`.
pub fn speaker_loss<T: Scalar>(
    x: &Matrix<T>,
    speakers: &[usize],
    theta_f: &Mlp<T>,
    theta_s: &Mlp<T>,
    reduction: LossReduction,
) -> Result<T> {
    branch_loss(x, speakers, theta_f, theta_s, reduction, "speaker")
}

/// Gradient of one branch loss with respect to the extractor and the branch head.
#[derive(Clone, Debug)]
pub struct BranchGradients<T> {
    pub loss: T,
    pub feature: Vec<LayerGrad<T>>,
    pub head: Vec<LayerGrad<T>>,
}

fn branch_gradients<T: Scalar>(
    x: &Matrix<T>,
    labels: &[usize],
    theta_f: &Mlp<T>,
    head: &Mlp<T>,
    reduction: LossReduction,
    what: &str,
) -> Result<BranchGradients<T>> {
    check_labels(labels, head.output_dim().unwrap_or(0), what)?;
    let f_trace = theta_f.forward_trace(x)?;
    let h_trace = head.forward_trace(&f_trace.output)?;
    let (loss, d_logits) = batch_cross_entropy(&h_trace.output, labels, reduction)?;
    let (head_grads, d_features) = head.backward(&h_trace, &d_logits)?;
    let (feature_grads, _) = theta_f.backward(&f_trace, &d_features)?;
    Ok(BranchGradients {
        loss,
        feature: feature_grads,
        head: head_grads,
    })
}

/// `∂L_senone/∂θ_f` and `∂L_senone/∂θ_y`.
pub fn senone_loss_grad<T: Scalar>(
    x: &Matrix<T>,
    senones: &[usize],
    theta_f: &Mlp<T>,
    theta_y: &Mlp<T>,
    reduction: LossReduction,
) -> Result<BranchGradients<T>> {
    branch_gradients(x, senones, theta_f, theta_y, reduction, "senone")
}

/// `∂L_speaker/∂θ_f` and `∂L_speaker/∂θ_s`.
pub fn speaker_loss_grad<T: Scalar>(
    x: &Matrix<T>,
    speakers: &[usize],
    theta_f: &Mlp<T>,
    theta_s: &Mlp<T>,
    reduction: LossReduction,
) -> Result<BranchGradients<T>> {
    branch_gradients(x, speakers, theta_f, theta_s, reduction, "speaker")
}

/// Update directions of all three parameter groups for one batch.
#[derive(Clone, Debug)]
pub struct SitGradients<T> {
    /// `∂L_senone/∂θ_f − λ·∂L_speaker/∂θ_f`
    pub feature: Vec<LayerGrad<T>>,
    /// `∂L_senone/∂θ_y`
    pub senone: Vec<LayerGrad<T>>,
    /// `∂L_speaker/∂θ_s`
    pub speaker: Vec<LayerGrad<T>>,
    pub breakdown: LossBreakdown<T>,
}

/// Combines independently evaluated branch gradients. Every term is computed
/// from `params` as given; nothing is updated in between.
pub fn staged_gradients<T: Scalar>(
    x: &Matrix<T>,
    senones: &[usize],
    speakers: &[usize],
    params: &ModelParams<T>,
    lambda: T,
    reduction: LossReduction,
) -> Result<SitGradients<T>> {
    let y = senone_loss_grad(x, senones, params.feature(), params.senone(), reduction)?;
    let s = speaker_loss_grad(x, speakers, params.feature(), &params.speaker, reduction)?;
    let feature = y
        .feature
        .iter()
        .zip(&s.feature)
        .map(|(gy, gs)| {
            Ok(LayerGrad {
                weights: gy.weights.zip_map(&gs.weights, |a, b| a - lambda * b)?,
                bias: gy.bias.iter().zip(&gs.bias).map(|(&a, &b)| a - lambda * b).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SitGradients {
        feature,
        senone: y.head,
        speaker: s.head,
        breakdown: LossBreakdown::new(y.loss, s.loss, lambda),
    })
}
