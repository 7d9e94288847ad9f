//! Senone discriminability and speaker invariance of deep features.
//!
//! Frame accuracy (argmax senone posterior against the reference label) is the
//! only recognition metric here; there is no decoder and no word error rate.
//! Speaker invariance is measured two ways: a freshly trained probe classifier
//! on frozen features, and the invariance ratio of between-speaker centroid
//! spread to within-cell scatter.

mod pca;
mod tsne;

pub use pca::Pca;
pub use tsne::{kl_divergence, tsne, TsneConfig, TSNE_MAX_POINTS};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::FrameBatch;
use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::loss::{batch_cross_entropy, LossReduction};
use crate::model::AcousticModel;
use crate::nn::{Activation, LayerSpec, Mlp};
use crate::scalar::Scalar;
use crate::seeding::stream;

pub const METRIC_NOTE: &str = "senone frame accuracy is reported in place of word error rate";

/// Fraction of frames whose argmax senone posterior equals the label.
///
/// The argmax is taken over logits, which softmax preserves, so decisions match
/// the trainer's logged accuracy exactly.
pub fn frame_accuracy<T: Scalar>(model: &AcousticModel<T>, batch: &FrameBatch<T>) -> Result<f64> {
    if batch.is_empty() {
        return Err(SitError::arg("frame accuracy of an empty batch"));
    }
    let pred = model.logits(&batch.frames)?.argmax_rows();
    Ok(agreement(&pred, &batch.senone_labels))
}

/// Fraction of positions where two label sequences agree.
pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    hits as f64 / a.len().max(1) as f64
}

pub fn per_speaker_accuracy<T: Scalar>(
    model: &AcousticModel<T>,
    batch: &FrameBatch<T>,
) -> Result<BTreeMap<usize, f64>> {
    if batch.is_empty() {
        return Err(SitError::arg("frame accuracy of an empty batch"));
    }
    let pred = model.logits(&batch.frames)?.argmax_rows();
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for ((p, y), a) in pred.iter().zip(&batch.senone_labels).zip(&batch.speaker_labels) {
        let e = counts.entry(*a).or_default();
        e.0 += usize::from(p == y);
        e.1 += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(a, (hit, n))| (a, hit as f64 / n as f64))
        .collect())
}

/// Fresh speaker classifier trained on frozen features. Defaults mirror the
/// adversary's hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    /// Learning rate on the batch-mean loss.
    pub mu: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
    /// Frames sampled (seeded) from the input before the split; `None` keeps all.
    pub max_frames: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: vec![128, 128],
            activation: Activation::Tanh,
            epochs: 30,
            mu: 0.1,
            batch_size: 32,
            train_fraction: 0.7,
            max_frames: Some(6000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_speakers: usize,
    pub chance: f64,
}

/// Trains a fresh speaker classifier on frozen features and reports its accuracy
/// on a disjoint held-out split.
///
/// Features are centred and divided by their overall RMS norm first. That
/// rescaling commutes with orthogonal transforms of the feature space, so the
/// probe sees rotated features exactly as rotated copies of the originals.
pub fn speaker_probe<T: Scalar>(
    features: &Matrix<T>,
    speakers: &[usize],
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    if speakers.len() != features.rows() {
        return Err(SitError::arg(format!(
            "{} speaker labels for {} feature rows",
            speakers.len(),
            features.rows()
        )));
    }
    let mut ids: Vec<usize> = speakers.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(SitError::arg(format!(
            "speaker probe needs at least 2 speakers, got {}",
            ids.len()
        )));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(SitError::config("probe.train_fraction", "must lie in (0, 1)"));
    }
    let local: HashMap<usize, usize> = ids.iter().enumerate().map(|(k, &a)| (a, k)).collect();

    let mut order: Vec<usize> = (0..features.rows()).collect();
    order.shuffle(&mut stream(seed, "probe-split", 0));
    if let Some(m) = config.max_frames {
        order.truncate(m);
    }
    let n_train = ((order.len() as f64) * config.train_fraction).round() as usize;
    if n_train == 0 || n_train >= order.len() {
        return Err(SitError::arg("too few frames for a train/test split"));
    }
    let (train_idx, test_idx) = order.split_at(n_train);

    let x: Matrix<f64> = features.cast();
    let mean = x.select_rows(train_idx).column_means();
    let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
    let centred = x.add_row_vector(&neg)?;
    let rms = (centred
        .select_rows(train_idx)
        .as_slice()
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        / train_idx.len() as f64)
        .sqrt();
    let scaled = if rms > 0.0 { centred.scale(1.0 / rms) } else { centred };

    let labels: Vec<usize> = speakers.iter().map(|a| local[a]).collect();
    let mut specs = Vec::new();
    let mut prev = features.cols();
    for &w in &config.hidden {
        specs.push(LayerSpec::new(prev, w, config.activation));
        prev = w;
    }
    specs.push(LayerSpec::new(prev, ids.len(), Activation::Linear));
    let mut probe = Mlp::<f64>::init(&specs, &mut stream(seed, "probe-init", 0))?;

    let mut train_order = train_idx.to_vec();
    for epoch in 0..config.epochs {
        train_order.shuffle(&mut stream(seed, "probe-order", epoch as u64));
        for idx in train_order.chunks(config.batch_size.max(1)) {
            let xb = scaled.select_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let trace = probe.forward_trace(&xb)?;
            let (_, d) = batch_cross_entropy(&trace.output, &yb, LossReduction::Mean)?;
            let (grads, _) = probe.backward(&trace, &d)?;
            probe.apply_grads(&grads, config.mu)?;
        }
    }
    let accuracy_on = |idx: &[usize]| -> Result<f64> {
        let pred = probe.forward(&scaled.select_rows(idx))?.argmax_rows();
        let truth: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        Ok(agreement(&pred, &truth))
    };
    Ok(ProbeResult {
        train_accuracy: accuracy_on(train_idx)?,
        test_accuracy: accuracy_on(test_idx)?,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        n_speakers: ids.len(),
        chance: 1.0 / ids.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub ratio: f64,
    pub senones_used: usize,
    pub warnings: Vec<String>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over senones of (mean pairwise distance between that senone's per-speaker
/// centroids) / (mean RMS radius of its (senone, speaker) cells).
///
/// Cells with fewer than 2 frames, and senones seen from fewer than 2 speakers,
/// are skipped with a warning. Lower means more speaker-invariant.
pub fn invariance_ratio<T: Scalar>(
    features: &Matrix<T>,
    senones: &[usize],
    speakers: &[usize],
) -> Result<InvarianceReport> {
    if senones.len() != features.rows() || speakers.len() != features.rows() {
        return Err(SitError::arg("label sequences must align with feature rows"));
    }
    let x: Matrix<f64> = features.cast();
    let mut cells: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (i, (&q, &a)) in senones.iter().zip(speakers).enumerate() {
        cells.entry(q).or_default().entry(a).or_default().push(i);
    }
    let mut warnings = Vec::new();
    let mut ratios = Vec::new();
    for (q, by_speaker) in &cells {
        let mut centroids = Vec::new();
        let mut radii = Vec::new();
        for (a, rows) in by_speaker {
            if rows.len() < 2 {
                warnings.push(format!(
                    "cell (senone {q}, speaker {a}) has {} frame(s); skipped",
                    rows.len()
                ));
                continue;
            }
            let c = x.select_rows(rows).column_means();
            let r = (rows.iter().map(|&i| euclidean(x.row(i), &c).powi(2)).sum::<f64>() / rows.len() as f64).sqrt();
            centroids.push(c);
            radii.push(r);
        }
        if centroids.len() < 2 {
            warnings.push(format!("senone {q} has fewer than 2 usable speakers; skipped"));
            continue;
        }
        let mut between = 0.0;
        let mut pairs = 0;
        for i in 0..centroids.len() {
            for j in (i + 1)..centroids.len() {
                between += euclidean(&centroids[i], &centroids[j]);
                pairs += 1;
            }
        }
        between /= pairs as f64;
        let within = radii.iter().sum::<f64>() / radii.len() as f64;
        if between == 0.0 {
            ratios.push(0.0);
        } else if within == 0.0 {
            warnings.push(format!("senone {q} has zero within-cell scatter; skipped"));
        } else {
            ratios.push(between / within);
        }
    }
    for w in &warnings {
        log::warn!("invariance ratio: {w}");
    }
    if ratios.is_empty() {
        return Err(SitError::Numeric("no senone usable for the invariance ratio".into()));
    }
    Ok(InvarianceReport {
        ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
        senones_used: ratios.len(),
        warnings,
    })
}

/// Mean pairwise distance between per-speaker centroids of a point cloud, divided
/// by the RMS distance of all points to their overall centroid.
pub fn centroid_separation(coords: &Matrix<f64>, speakers: &[usize]) -> Result<f64> {
    if speakers.len() != coords.rows() || coords.rows() == 0 {
        return Err(SitError::arg("speaker labels must align with coordinate rows"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in speakers.iter().enumerate() {
        groups.entry(a).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(SitError::arg("centroid separation needs at least 2 speakers"));
    }
    let centroids: Vec<Vec<f64>> = groups
        .values()
        .map(|rows| coords.select_rows(rows).column_means())
        .collect();
    let mut between = 0.0;
    let mut pairs = 0;
    for i in 0..centroids.len() {
        for j in (i + 1)..centroids.len() {
            between += euclidean(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    let centre = coords.column_means();
    let spread = (coords.row_iter().map(|r| euclidean(r, &centre).powi(2)).sum::<f64>() / coords.rows() as f64).sqrt();
    if spread == 0.0 {
        return Ok(0.0);
    }
    Ok(between / pairs as f64 / spread)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

/// Two-dimensional coordinates for plotting deep features.
pub fn project_2d<T: Scalar>(
    features: &Matrix<T>,
    method: ProjectionMethod,
    tsne_config: &TsneConfig,
    seed: u64,
) -> Result<Matrix<f64>> {
    if features.rows() < 3 {
        return Err(SitError::arg(format!(
            "projection needs at least 3 points, got {}",
            features.rows()
        )));
    }
    match method {
        ProjectionMethod::Pca => {
            let k = features.cols().min(2);
            let coords = Pca::fit(features, k)?.transform(features)?;
            if k == 2 {
                Ok(coords)
            } else {
                Ok(Matrix::from_fn(coords.rows(), 2, |i, j| {
                    if j == 0 {
                        coords.get(i, 0)
                    } else {
                        0.0
                    }
                }))
            }
        }
        ProjectionMethod::Tsne => tsne(features, tsne_config, seed),
    }
}

/// Writes `x,y,senone,speaker` rows.
pub fn write_projection_csv(path: &Path, coords: &Matrix<f64>, senones: &[usize], speakers: &[usize]) -> Result<()> {
    if coords.cols() != 2 || senones.len() != coords.rows() || speakers.len() != coords.rows() {
        return Err(SitError::arg("projection rows and labels must align"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "senone", "speaker"])?;
    for i in 0..coords.rows() {
        w.write_record([
            coords.get(i, 0).to_string(),
            coords.get(i, 1).to_string(),
            senones[i].to_string(),
            speakers[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub senone_frame_accuracy: f64,
    pub speaker_probe_accuracy: f64,
    pub invariance_ratio: f64,
    pub per_speaker_accuracy: BTreeMap<usize, f64>,
    pub n_frames: usize,
    pub note: String,
}

/// Full report of one acoustic model on one labelled batch.
pub fn evaluate<T: Scalar>(
    model: &AcousticModel<T>,
    batch: &FrameBatch<T>,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<EvalReport> {
    let features = model.deep_features(&batch.frames)?;
    let probe_result = speaker_probe(&features, &batch.speaker_labels, probe, seed)?;
    let inv = invariance_ratio(&features, &batch.senone_labels, &batch.speaker_labels)?;
    Ok(EvalReport {
        senone_frame_accuracy: frame_accuracy(model, batch)?,
        speaker_probe_accuracy: probe_result.test_accuracy,
        invariance_ratio: inv.ratio,
        per_speaker_accuracy: per_speaker_accuracy(model, batch)?,
        n_frames: batch.len(),
        note: METRIC_NOTE.into(),
    })
}
