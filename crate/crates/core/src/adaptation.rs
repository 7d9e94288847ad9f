//! Unsupervised per-speaker adaptation by constrained re-training.
//!
//! Targets come from a first pass of the unadapted model over the speaker's
//! frames and are fixed once before adaptation starts. Two first passes exist:
//! the per-frame argmax of the senone posteriors, and a Viterbi decode of those
//! posteriors under a self-loop HMM. Retraining on the per-frame argmax is close
//! to a fixed point (the model already agrees with every target), so the decode,
//! which uses the temporal order of the frames, is the default. Only the
//! selected layers of the combined acoustic stack move; every other parameter
//! is carried over bit for bit.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::loss::{batch_cross_entropy, LossReduction};
use crate::model::AcousticModel;
use crate::optim::{sgd_step, sgd_step_vec};
use crate::scalar::Scalar;
use crate::seeding::stream;

/// Fraction of the training learning rate used when `mu_adapt` is not set.
pub const DEFAULT_ADAPT_MU_FACTOR: f64 = 0.1;

/// How adaptation targets are derived from the unadapted model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FirstPass {
    /// [`pseudo_label`]: per-frame argmax.
    FrameArgmax,
    /// [`viterbi_labels`] with the given self-loop probability.
    Viterbi { self_loop: f64 },
}

impl Default for FirstPass {
    fn default() -> Self {
        FirstPass::Viterbi { self_loop: 0.99 }
    }
}

impl FirstPass {
    pub fn targets<T: Scalar>(&self, model: &AcousticModel<T>, frames: &Matrix<T>) -> Result<Vec<usize>> {
        match *self {
            FirstPass::FrameArgmax => pseudo_label(model, frames),
            FirstPass::Viterbi { self_loop } => viterbi_labels(&model.posteriors(frames)?, self_loop),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Global indices into the combined stack (feature extractor layers first).
    pub layers_to_adapt: BTreeSet<usize>,
    /// Learning rate; `None` means [`DEFAULT_ADAPT_MU_FACTOR`] × training rate.
    pub mu_adapt: Option<f64>,
    pub epochs_adapt: usize,
    pub first_pass: FirstPass,
    pub batch_size: usize,
    pub reduction: LossReduction,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            layers_to_adapt: [0, 1].into_iter().collect(),
            mu_adapt: None,
            epochs_adapt: 10,
            first_pass: FirstPass::default(),
            batch_size: 64,
            reduction: LossReduction::Sum,
            seed: 23,
        }
    }
}

impl AdaptConfig {
    pub fn resolved_mu(&self, training_mu: f64) -> f64 {
        self.mu_adapt.unwrap_or(DEFAULT_ADAPT_MU_FACTOR * training_mu)
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if let Some(&bad) = self.layers_to_adapt.iter().find(|&&l| l >= depth) {
            return Err(SitError::arg(format!(
                "adapt layer index {bad} out of range for a {depth}-layer stack"
            )));
        }
        if self.batch_size == 0 {
            return Err(SitError::config("adapt.batch_size", "must be >= 1"));
        }
        if let Some(mu) = self.mu_adapt {
            if !(mu >= 0.0) || !mu.is_finite() {
                return Err(SitError::config("adapt.mu_adapt", "must be finite and >= 0"));
            }
        }
        if let FirstPass::Viterbi { self_loop } = self.first_pass {
            if !(self_loop > 0.0 && self_loop < 1.0) {
                return Err(SitError::config("adapt.first_pass.self_loop", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// `argmax_q p(q | x_i)` per frame; ties go to the lowest senone index.
pub fn pseudo_label<T: Scalar>(model: &AcousticModel<T>, frames: &Matrix<T>) -> Result<Vec<usize>> {
    Ok(model.posteriors(frames)?.argmax_rows())
}

/// Single-best state path through the frame posteriors under an ergodic HMM
/// whose states stay put with probability `self_loop` and otherwise jump
/// uniformly to any other state. Frames must be in temporal order.
///
/// Ties go to the lowest state index, both per frame and along the back-trace.
pub fn viterbi_labels<T: Scalar>(posteriors: &Matrix<T>, self_loop: f64) -> Result<Vec<usize>> {
    let (n, q) = posteriors.shape();
    if !(self_loop > 0.0 && self_loop < 1.0) {
        return Err(SitError::config("adapt.first_pass.self_loop", "must lie in (0, 1)"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if q == 1 {
        return Ok(vec![0; n]);
    }
    let stay = self_loop.ln();
    let jump = ((1.0 - self_loop) / (q - 1) as f64).ln();
    let emit = |i: usize, k: usize| posteriors.get(i, k).as_f64().max(1e-300).ln();

    let mut score: Vec<f64> = (0..q).map(|k| emit(0, k)).collect();
    // back[i * q + k]: best predecessor of state k at frame i
    let mut back = vec![0usize; n * q];
    for i in 1..n {
        // best and runner-up of the previous column, so each state can find its best other predecessor
        let (mut b1, mut b2) = (0usize, usize::MAX);
        for k in 1..q {
            if score[k] > score[b1] {
                b2 = b1;
                b1 = k;
            } else if b2 == usize::MAX || score[k] > score[b2] {
                b2 = k;
            }
        }
        let mut next = vec![0.0; q];
        for k in 0..q {
            let other = if k == b1 { b2 } else { b1 };
            let via_stay = score[k] + stay;
            let via_jump = score[other] + jump;
            let (best, from) = if via_stay > via_jump || (via_stay == via_jump && k < other) {
                (via_stay, k)
            } else {
                (via_jump, other)
            };
            next[k] = best + emit(i, k);
            back[i * q + k] = from;
        }
        score = next;
    }
    let mut state = (0..q).fold(0, |b, k| if score[k] > score[b] { k } else { b });
    let mut path = vec![0; n];
    for i in (0..n).rev() {
        path[i] = state;
        state = back[i * q + state];
    }
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome<T> {
    pub model: AcousticModel<T>,
    /// Targets the adaptation was trained on.
    pub targets: Vec<usize>,
}

/// Adapts to one speaker's frames (in temporal order) using first-pass targets.
pub fn crt_adapt<T: Scalar>(
    model: &AcousticModel<T>,
    frames: &Matrix<T>,
    config: &AdaptConfig,
    training_mu: f64,
) -> Result<AdaptOutcome<T>> {
    if frames.rows() == 0 {
        return Err(SitError::arg("no frames to adapt on"));
    }
    let targets = config.first_pass.targets(model, frames)?;
    let adapted = crt_adapt_with_targets(model, frames, &targets, config, training_mu)?;
    Ok(AdaptOutcome {
        model: adapted,
        targets,
    })
}

/// Constrained re-training against fixed targets (pseudo or reference labels).
pub fn crt_adapt_with_targets<T: Scalar>(
    model: &AcousticModel<T>,
    frames: &Matrix<T>,
    targets: &[usize],
    config: &AdaptConfig,
    training_mu: f64,
) -> Result<AcousticModel<T>> {
    if frames.rows() == 0 {
        return Err(SitError::arg("no frames to adapt on"));
    }
    if targets.len() != frames.rows() {
        return Err(SitError::arg(format!(
            "{} targets for {} frames",
            targets.len(),
            frames.rows()
        )));
    }
    config.validate(model.depth())?;
    if config.layers_to_adapt.is_empty() || config.epochs_adapt == 0 {
        return Ok(model.clone());
    }
    let mu = T::lit(config.resolved_mu(training_mu));
    let mut stack = model.stack();
    for epoch in 0..config.epochs_adapt {
        let mut order: Vec<usize> = (0..frames.rows()).collect();
        order.shuffle(&mut stream(config.seed, "adapt-order", epoch as u64));
        for idx in order.chunks(config.batch_size) {
            let x = frames.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let trace = stack.forward_trace(&x)?;
            let (_, d_logits) = batch_cross_entropy(&trace.output, &y, config.reduction)?;
            let (grads, _) = stack.backward(&trace, &d_logits)?;
            for (li, (layer, g)) in stack.layers_mut().iter_mut().zip(&grads).enumerate() {
                if !config.layers_to_adapt.contains(&li) {
                    continue;
                }
                if !g.is_finite() {
                    return Err(SitError::Numeric(format!("non-finite gradient in adapted layer {li}")));
                }
                layer.weights = sgd_step(&layer.weights, &g.weights, mu)?;
                layer.bias = sgd_step_vec(&layer.bias, &g.bias, mu)?;
            }
        }
    }
    let (feature, senone) = stack.split_at(model.n_h());
    AcousticModel::new(feature, senone)
}
