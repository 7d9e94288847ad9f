//! Speaker-independent baseline training and the adversarial speaker-invariant loop.
//!
//! Both loops share one batch schedule: epoch `e` visits the corpus in the order
//! given by [`epoch_order`]`(n, seed, e)`, cut into consecutive batches. A
//! speaker-invariant run with `λ = 0` therefore walks exactly the same batches as
//! continued baseline training from the same starting point.

use std::path::Path;

use serde::Serialize;

use crate::data::FrameBatch;
use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::loss::{batch_cross_entropy, LossReduction};
use crate::model::{grl_backward, split_pretrained, AcousticTopology, Hyperparams, ModelParams, SpeakerTopology};
use crate::nn::Mlp;
use crate::objectives::{LossBreakdown, SitGradients};
use crate::scalar::Scalar;
use crate::seeding::stream;

/// Abort threshold on `|total_loss|` for a single batch.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub senone_loss: f64,
    pub speaker_loss: f64,
    pub total_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub mean_senone_loss: f64,
    pub mean_speaker_loss: f64,
    /// Senone frame accuracy on the training corpus after the epoch.
    pub senone_accuracy: f64,
    /// Accuracy of the speaker classifier on the training corpus after the epoch.
    pub speaker_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    fn push_batch<T: Scalar>(&mut self, epoch: usize, batch: usize, b: &LossBreakdown<T>) {
        self.batches.push(BatchRecord {
            epoch,
            batch,
            senone_loss: b.senone_loss.as_f64(),
            speaker_loss: b.speaker_loss.as_f64(),
            total_loss: b.total_loss.as_f64(),
        });
    }

    pub fn final_senone_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.senone_accuracy)
    }

    /// One row per batch: `epoch,batch,senone_loss,speaker_loss,total_loss`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.batches {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_epoch_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch",
            "lambda",
            "mean_senone_loss",
            "mean_speaker_loss",
            "senone_accuracy",
            "speaker_accuracy",
        ])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.lambda.to_string(),
                e.mean_senone_loss.to_string(),
                e.mean_speaker_loss.to_string(),
                e.senone_accuracy.to_string(),
                e.speaker_accuracy.map_or(String::new(), |a| a.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seeded visiting order of `n` frames in epoch `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "batch-order", epoch as u64));
    order
}

/// Freshly initialized single-stack acoustic model.
pub fn init_acoustic<T: Scalar>(topology: &AcousticTopology, seed: u64) -> Result<Mlp<T>> {
    topology.validate()?;
    Mlp::init(&topology.specs(), &mut stream(seed, "acoustic-init", 0))
}

/// Freshly initialized speaker classifier on `feature_dim`-wide deep features.
pub fn init_speaker<T: Scalar>(topology: &SpeakerTopology, feature_dim: usize, seed: u64) -> Result<Mlp<T>> {
    topology.validate()?;
    Mlp::init(&topology.specs(feature_dim), &mut stream(seed, "speaker-init", 0))
}

fn check_corpus<T: Scalar>(corpus: &FrameBatch<T>, input_dim: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(SitError::arg("training corpus is empty"));
    }
    if corpus.dim() != input_dim {
        return Err(SitError::LayerShape {
            group: "acoustic stack",
            layer: 0,
            expected: input_dim,
            found: corpus.dim(),
        });
    }
    Ok(())
}

fn guard<T: Scalar>(b: &LossBreakdown<T>, finite_params: bool, epoch: usize, batch: usize) -> Result<()> {
    let total = b.total_loss.as_f64();
    if !total.is_finite() || total.abs() > DIVERGENCE_LIMIT {
        return Err(SitError::Divergence {
            epoch,
            batch,
            reason: format!(
                "total loss {total} (senone {}, speaker {})",
                b.senone_loss, b.speaker_loss
            ),
        });
    }
    if !finite_params {
        return Err(SitError::Divergence {
            epoch,
            batch,
            reason: "non-finite parameter after update".into(),
        });
    }
    Ok(())
}

/// One SGD step on the senone loss of a single-stack model. Returns the batch loss
/// evaluated before the update.
pub fn si_step<T: Scalar>(
    model: &mut Mlp<T>,
    x: &Matrix<T>,
    senones: &[usize],
    mu: T,
    reduction: LossReduction,
) -> Result<T> {
    let trace = model.forward_trace(x)?;
    let (loss, d_logits) = batch_cross_entropy(&trace.output, senones, reduction)?;
    let (grads, _) = model.backward(&trace, &d_logits)?;
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(SitError::Numeric("non-finite senone gradient".into()));
    }
    model.apply_grads(&grads, mu)?;
    Ok(loss)
}

/// All three update directions from one forward pass, with the speaker gradient
/// entering the feature extractor through the reversal.
pub fn sit_gradients<T: Scalar>(
    params: &ModelParams<T>,
    x: &Matrix<T>,
    senones: &[usize],
    speakers: &[usize],
    lambda: T,
    reduction: LossReduction,
) -> Result<SitGradients<T>> {
    let f_trace = params.feature().forward_trace(x)?;
    let features = &f_trace.output;

    let y_trace = params.senone().forward_trace(features)?;
    let (senone_loss, d_senone_logits) = batch_cross_entropy(&y_trace.output, senones, reduction)?;
    let (senone_grads, d_f_senone) = params.senone().backward(&y_trace, &d_senone_logits)?;

    // reversal is the identity going forward: M_s sees F itself
    let s_trace = params.speaker.forward_trace(features)?;
    let (speaker_loss, d_speaker_logits) = batch_cross_entropy(&s_trace.output, speakers, reduction)?;
    let (speaker_grads, d_f_speaker) = params.speaker.backward(&s_trace, &d_speaker_logits)?;

    // with λ = 0 the reversed term is identically zero and is left out entirely
    let d_f = if lambda == T::zero() {
        d_f_senone
    } else {
        d_f_senone.add(&grl_backward(&d_f_speaker, lambda))?
    };
    let (feature_grads, _) = params.feature().backward(&f_trace, &d_f)?;

    Ok(SitGradients {
        feature: feature_grads,
        senone: senone_grads,
        speaker: speaker_grads,
        breakdown: LossBreakdown::new(senone_loss, speaker_loss, lambda),
    })
}

/// One simultaneous SGD update of `θ_f`, `θ_y` and `θ_s`, all gradients taken at
/// the incoming parameters. Returns the pre-update losses.
pub fn sit_step<T: Scalar>(
    params: &mut ModelParams<T>,
    x: &Matrix<T>,
    senones: &[usize],
    speakers: &[usize],
    lambda: T,
    mu: T,
    reduction: LossReduction,
) -> Result<LossBreakdown<T>> {
    if speakers.iter().any(|&s| s >= params.n_speakers()) {
        return Err(SitError::arg(format!(
            "speaker label out of range for {} speakers",
            params.n_speakers()
        )));
    }
    let g = sit_gradients(params, x, senones, speakers, lambda, reduction)?;
    let finite = g
        .feature
        .iter()
        .chain(&g.senone)
        .chain(&g.speaker)
        .all(|l| l.is_finite());
    if !finite {
        return Err(SitError::Numeric(
            "non-finite gradient in speaker-invariant step".into(),
        ));
    }
    params.acoustic.feature.apply_grads(&g.feature, mu)?;
    params.acoustic.senone.apply_grads(&g.senone, mu)?;
    params.speaker.apply_grads(&g.speaker, mu)?;
    Ok(g.breakdown)
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Trains a single-stack model from a seeded initialization on the senone loss.
pub fn train_si<T: Scalar>(
    corpus: &FrameBatch<T>,
    topology: &AcousticTopology,
    hyper: &Hyperparams,
) -> Result<(Mlp<T>, TrainLog)> {
    let model = init_acoustic(topology, hyper.seed)?;
    continue_si(model, corpus, hyper)
}

/// Continues senone-loss training of an existing single-stack model.
pub fn continue_si<T: Scalar>(
    model: Mlp<T>,
    corpus: &FrameBatch<T>,
    hyper: &Hyperparams,
) -> Result<(Mlp<T>, TrainLog)> {
    continue_si_with(model, corpus, hyper, |_, _| Ok(()))
}

/// [`continue_si`] with a callback after every epoch (for periodic checkpoints).
pub fn continue_si_with<T: Scalar>(
    mut model: Mlp<T>,
    corpus: &FrameBatch<T>,
    hyper: &Hyperparams,
    mut on_epoch: impl FnMut(usize, &Mlp<T>) -> Result<()>,
) -> Result<(Mlp<T>, TrainLog)> {
    check_corpus(corpus, model.input_dim().unwrap_or(0))?;
    if hyper.batch_size == 0 {
        return Err(SitError::config("hyper.batch_size", "must be >= 1"));
    }
    let mu = T::lit(hyper.mu);
    let mut log = TrainLog::default();
    for epoch in 0..hyper.epochs {
        let order = epoch_order(corpus.len(), hyper.seed, epoch);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch = corpus.select(idx);
            let loss = si_step(&mut model, &batch.frames, &batch.senone_labels, mu, hyper.reduction)?;
            let b = LossBreakdown::senone_only(loss);
            guard(&b, model.is_finite(), epoch, bi)?;
            log.push_batch(epoch, bi, &b);
            loss_sum += loss.as_f64();
        }
        let pred = model.forward(&corpus.frames)?.argmax_rows();
        let acc = accuracy(&pred, &corpus.senone_labels);
        let n_batches = order.len().div_ceil(hyper.batch_size);
        log::info!(
            "si epoch {epoch}: mean senone loss {:.4}, accuracy {acc:.4}",
            loss_sum / n_batches as f64
        );
        log.epochs.push(EpochRecord {
            epoch,
            lambda: 0.0,
            mean_senone_loss: loss_sum / n_batches as f64,
            mean_speaker_loss: 0.0,
            senone_accuracy: acc,
            speaker_accuracy: None,
        });
        on_epoch(epoch, &model)?;
    }
    Ok((model, log))
}

/// Fits only the speaker classifier on features of the frozen extractor.
fn pretrain_speaker<T: Scalar>(params: &mut ModelParams<T>, corpus: &FrameBatch<T>, hyper: &Hyperparams) -> Result<()> {
    let mu = T::lit(hyper.mu);
    for epoch in 0..hyper.speaker_pretrain_epochs {
        let order = epoch_order(corpus.len(), hyper.seed ^ 0x5eed, epoch);
        for idx in order.chunks(hyper.batch_size) {
            let batch = corpus.select(idx);
            let f = params.acoustic.deep_features(&batch.frames)?;
            let trace = params.speaker.forward_trace(&f)?;
            let (_, d) = batch_cross_entropy(&trace.output, &batch.speaker_labels, hyper.reduction)?;
            let (grads, _) = params.speaker.backward(&trace, &d)?;
            params.speaker.apply_grads(&grads, mu)?;
        }
    }
    Ok(())
}

/// Adversarial training starting from a baseline model.
///
/// The extractor and senone classifier are the baseline split after `hyper.n_h`
/// layers; the speaker classifier starts from a fresh seeded initialization.
pub fn train_sit<T: Scalar>(
    si_model: &Mlp<T>,
    corpus: &FrameBatch<T>,
    speaker_topology: &SpeakerTopology,
    hyper: &Hyperparams,
) -> Result<(ModelParams<T>, TrainLog)> {
    let acoustic = split_pretrained(si_model, hyper.n_h)?;
    let speaker = init_speaker(speaker_topology, acoustic.feature_dim(), hyper.seed)?;
    let params = ModelParams::new(acoustic, speaker)?;
    continue_sit(params, corpus, hyper)
}

/// Runs the adversarial loop on already-assembled parameters.
pub fn continue_sit<T: Scalar>(
    params: ModelParams<T>,
    corpus: &FrameBatch<T>,
    hyper: &Hyperparams,
) -> Result<(ModelParams<T>, TrainLog)> {
    continue_sit_with(params, corpus, hyper, |_, _| Ok(()))
}

/// [`continue_sit`] with a callback after every epoch.
pub fn continue_sit_with<T: Scalar>(
    mut params: ModelParams<T>,
    corpus: &FrameBatch<T>,
    hyper: &Hyperparams,
    mut on_epoch: impl FnMut(usize, &ModelParams<T>) -> Result<()>,
) -> Result<(ModelParams<T>, TrainLog)> {
    check_corpus(corpus, params.acoustic.input_dim())?;
    if corpus.n_speakers > params.n_speakers() {
        return Err(SitError::arg(format!(
            "corpus has {} speakers but the speaker classifier predicts {}",
            corpus.n_speakers,
            params.n_speakers()
        )));
    }
    if hyper.batch_size == 0 {
        return Err(SitError::config("hyper.batch_size", "must be >= 1"));
    }
    pretrain_speaker(&mut params, corpus, hyper)?;

    let mu = T::lit(hyper.mu);
    let mut log = TrainLog::default();
    for epoch in 0..hyper.epochs {
        let lambda = hyper.lambda_schedule.lambda_at(hyper.lambda, epoch);
        let lambda_t = T::lit(lambda);
        let order = epoch_order(corpus.len(), hyper.seed, epoch);
        let (mut y_sum, mut s_sum) = (0.0, 0.0);
        for (bi, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch = corpus.select(idx);
            let b = sit_step(
                &mut params,
                &batch.frames,
                &batch.senone_labels,
                &batch.speaker_labels,
                lambda_t,
                mu,
                hyper.reduction,
            )?;
            guard(&b, params.is_finite(), epoch, bi)?;
            log.push_batch(epoch, bi, &b);
            y_sum += b.senone_loss.as_f64();
            s_sum += b.speaker_loss.as_f64();
        }
        let n_batches = order.len().div_ceil(hyper.batch_size) as f64;
        let features = params.acoustic.deep_features(&corpus.frames)?;
        let senone_pred = params.senone().forward(&features)?.argmax_rows();
        let speaker_pred = params.speaker.forward(&features)?.argmax_rows();
        let senone_acc = accuracy(&senone_pred, &corpus.senone_labels);
        let speaker_acc = accuracy(&speaker_pred, &corpus.speaker_labels);
        log::info!(
            "sit epoch {epoch}: senone loss {:.4}, speaker loss {:.4}, senone acc {senone_acc:.4}, speaker acc {speaker_acc:.4}",
            y_sum / n_batches,
            s_sum / n_batches
        );
        log.epochs.push(EpochRecord {
            epoch,
            lambda,
            mean_senone_loss: y_sum / n_batches,
            mean_speaker_loss: s_sum / n_batches,
            senone_accuracy: senone_acc,
            speaker_accuracy: Some(speaker_acc),
        });
        on_epoch(epoch, &params)?;
    }
    Ok((params, log))
}
