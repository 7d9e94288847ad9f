//! Synthetic multi-speaker frame corpora and the front-end feature pipeline.
//!
//! Every raw frame of senone `q` spoken by speaker `a` is
//!
//! ```text
//! x = (I + warp·W_a)·μ_q + shift·δ_a + noise·ε
//! ```
//!
//! with a seeded prototype `μ_q`, per-speaker offset `δ_a` and per-speaker
//! matrix `W_a` (standard normal entries) and standard normal `ε`. Each source
//! of randomness has its own stream keyed by the corpus seed and the senone or
//! speaker index, so the test partition draws speakers that never occur in
//! training and nothing depends on generation order across speakers.
//!
//! Frames are laid out speaker-major, then senone, then repetition. Splicing
//! runs within each speaker's block, so context windows never straddle two
//! speakers.

mod features;
mod sitc;

pub use features::{normalize, splice, NormStats, NORM_EPSILON};
pub use sitc::{decode_sitc, encode_sitc, load_corpus, save_corpus, SITC_MAGIC, SITC_VERSION};

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::seeding::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub n_senones: usize,
    /// Speakers in the training partition.
    pub n_speakers: usize,
    /// Held-out speakers in the test partition.
    pub n_test_speakers: usize,
    pub base_dim: usize,
    pub frames_per_speaker_per_senone: usize,
    pub speaker_shift_scale: f64,
    pub speaker_warp_scale: f64,
    pub noise_scale: f64,
    pub splice_left: usize,
    pub splice_right: usize,
    pub seed: u64,
    /// When set, `δ_a` and `W_a` are random combinations of this many shared
    /// seeded basis vectors/matrices instead of independent draws, so speakers
    /// vary along a common low-dimensional subspace.
    pub speaker_factor_rank: Option<usize>,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_senones: 20,
            n_speakers: 8,
            n_test_speakers: 2,
            base_dim: 13,
            frames_per_speaker_per_senone: 100,
            speaker_shift_scale: 0.7,
            speaker_warp_scale: 0.2,
            noise_scale: 0.7,
            splice_left: 2,
            splice_right: 2,
            seed: 1,
            speaker_factor_rank: Some(4),
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("corpus.n_senones", self.n_senones),
            ("corpus.n_speakers", self.n_speakers),
            ("corpus.n_test_speakers", self.n_test_speakers),
            ("corpus.base_dim", self.base_dim),
            (
                "corpus.frames_per_speaker_per_senone",
                self.frames_per_speaker_per_senone,
            ),
            ("corpus.speaker_factor_rank", self.speaker_factor_rank.unwrap_or(1)),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(SitError::config(field, "must be >= 1"));
            }
        }
        let scales = [
            ("corpus.speaker_shift_scale", self.speaker_shift_scale),
            ("corpus.speaker_warp_scale", self.speaker_warp_scale),
            ("corpus.noise_scale", self.noise_scale),
        ];
        for (field, v) in scales {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SitError::config(field, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Width of a spliced frame.
    pub fn input_dim(&self) -> usize {
        (self.splice_left + self.splice_right + 1) * self.base_dim
    }

    pub fn train_frames(&self) -> usize {
        self.n_senones * self.n_speakers * self.frames_per_speaker_per_senone
    }

    /// Global speaker ids belonging to a partition.
    pub fn speaker_ids(&self, partition: Partition) -> std::ops::Range<usize> {
        match partition {
            Partition::Train => 0..self.n_speakers,
            Partition::Test => self.n_speakers..self.n_speakers + self.n_test_speakers,
        }
    }

    /// Size of the global speaker id space.
    pub fn total_speakers(&self) -> usize {
        self.n_speakers + self.n_test_speakers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

fn normal_vec(rng: &mut impl rand::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Senone prototypes `μ_q`, one row per senone.
pub fn prototypes(spec: &SyntheticCorpusSpec) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = (0..spec.n_senones)
        .map(|q| normal_vec(&mut stream(spec.seed, "senone-prototype", q as u64), spec.base_dim))
        .collect();
    Matrix::from_rows(&rows).expect("equal-length prototype rows")
}

/// Per-speaker distortion: `W_a` and `δ_a`.
#[derive(Clone, Debug)]
pub struct SpeakerFactors {
    pub warp: Matrix<f64>,
    pub shift: Vec<f64>,
}

pub fn speaker_factors(spec: &SyntheticCorpusSpec, speaker: usize) -> SpeakerFactors {
    let d = spec.base_dim;
    let mut rng = stream(spec.seed, "speaker-factors", speaker as u64);
    let Some(rank) = spec.speaker_factor_rank else {
        let warp = Matrix::from_vec(d, d, normal_vec(&mut rng, d * d)).expect("square warp");
        let shift = normal_vec(&mut rng, d);
        return SpeakerFactors { warp, shift };
    };
    // unit-variance combinations of the shared basis keep entries at unit scale
    let weights = normal_vec(&mut rng, 2 * rank);
    let norm = 1.0 / (rank as f64).sqrt();
    let mut warp = Matrix::zeros(d, d);
    let mut shift = vec![0.0; d];
    for k in 0..rank {
        let mut basis = stream(spec.seed, "speaker-basis", k as u64);
        let w_k = normal_vec(&mut basis, d * d);
        let s_k = normal_vec(&mut basis, d);
        for (dst, src) in warp.as_mut_slice().iter_mut().zip(&w_k) {
            *dst += norm * weights[k] * src;
        }
        for (dst, src) in shift.iter_mut().zip(&s_k) {
            *dst += norm * weights[rank + k] * src;
        }
    }
    SpeakerFactors { warp, shift }
}

/// Unspliced, unnormalized frames of one partition.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCorpus {
    pub frames: Matrix<f64>,
    pub senone_labels: Vec<usize>,
    /// Global speaker ids.
    pub speaker_labels: Vec<usize>,
    /// Row range of each speaker's contiguous block, in speaker order.
    pub segments: Vec<(usize, std::ops::Range<usize>)>,
}

/// Draws the raw frames of a partition. Deterministic in `(spec, partition)`.
pub fn gen_corpus(spec: &SyntheticCorpusSpec, partition: Partition) -> Result<RawCorpus> {
    spec.validate()?;
    let d = spec.base_dim;
    let protos = prototypes(spec);
    let per_speaker = spec.n_senones * spec.frames_per_speaker_per_senone;
    let speakers = spec.speaker_ids(partition);
    let n = speakers.len() * per_speaker;

    let mut data = Vec::with_capacity(n * d);
    let mut senone_labels = Vec::with_capacity(n);
    let mut speaker_labels = Vec::with_capacity(n);
    let mut segments = Vec::with_capacity(speakers.len());
    for a in speakers {
        let start = senone_labels.len();
        let factors = speaker_factors(spec, a);
        let mut noise_rng = stream(spec.seed, "frame-noise", a as u64);
        for q in 0..spec.n_senones {
            let mu = protos.row(q);
            // (I + warp·W_a)·μ_q + shift·δ_a, shared by every frame of the cell
            let centre: Vec<f64> = (0..d)
                .map(|i| {
                    let wm: f64 = factors.warp.row(i).iter().zip(mu).map(|(w, m)| w * m).sum();
                    mu[i] + spec.speaker_warp_scale * wm + spec.speaker_shift_scale * factors.shift[i]
                })
                .collect();
            for _ in 0..spec.frames_per_speaker_per_senone {
                for &c in &centre {
                    let eps: f64 = StandardNormal.sample(&mut noise_rng);
                    data.push(c + spec.noise_scale * eps);
                }
                senone_labels.push(q);
                speaker_labels.push(a);
            }
        }
        segments.push((a, start..senone_labels.len()));
    }
    Ok(RawCorpus {
        frames: Matrix::from_vec(n, d, data)?,
        senone_labels,
        speaker_labels,
        segments,
    })
}

/// Spliced, normalized frames with aligned senone and speaker labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBatch<T> {
    pub frames: Matrix<T>,
    pub senone_labels: Vec<usize>,
    pub speaker_labels: Vec<usize>,
    /// Senone vocabulary size `|Q|`.
    pub n_senones: usize,
    /// Speaker id space; labels are `< n_speakers`.
    pub n_speakers: usize,
    pub norm: Option<NormStats<T>>,
}

impl<T: Scalar> FrameBatch<T> {
    pub fn new(
        frames: Matrix<T>,
        senone_labels: Vec<usize>,
        speaker_labels: Vec<usize>,
        n_senones: usize,
        n_speakers: usize,
    ) -> Result<Self> {
        let b = FrameBatch {
            frames,
            senone_labels,
            speaker_labels,
            n_senones,
            n_speakers,
            norm: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.rows();
        if self.senone_labels.len() != n || self.speaker_labels.len() != n {
            return Err(SitError::arg(format!(
                "{n} frames but {} senone / {} speaker labels",
                self.senone_labels.len(),
                self.speaker_labels.len()
            )));
        }
        if let Some(&q) = self.senone_labels.iter().find(|&&q| q >= self.n_senones) {
            return Err(SitError::arg(format!("senone label {q} >= {}", self.n_senones)));
        }
        if let Some(&a) = self.speaker_labels.iter().find(|&&a| a >= self.n_speakers) {
            return Err(SitError::arg(format!("speaker label {a} >= {}", self.n_speakers)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Frames at `indices`, in that order; vocabulary and stats carried over.
    pub fn select(&self, indices: &[usize]) -> FrameBatch<T> {
        FrameBatch {
            frames: self.frames.select_rows(indices),
            senone_labels: indices.iter().map(|&i| self.senone_labels[i]).collect(),
            speaker_labels: indices.iter().map(|&i| self.speaker_labels[i]).collect(),
            n_senones: self.n_senones,
            n_speakers: self.n_speakers,
            norm: self.norm.clone(),
        }
    }

    /// Distinct speaker ids present, ascending.
    pub fn speakers(&self) -> Vec<usize> {
        let mut ids = self.speaker_labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn indices_where(&self, pred: impl Fn(usize, usize) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| pred(self.senone_labels[i], self.speaker_labels[i]))
            .collect()
    }

    pub fn speaker_subset(&self, speaker: usize) -> FrameBatch<T> {
        self.select(&self.indices_where(|_, a| a == speaker))
    }

    pub fn cast<U: Scalar>(&self) -> FrameBatch<U> {
        FrameBatch {
            frames: self.frames.cast(),
            senone_labels: self.senone_labels.clone(),
            speaker_labels: self.speaker_labels.clone(),
            n_senones: self.n_senones,
            n_speakers: self.n_speakers,
            norm: self.norm.as_ref().map(NormStats::cast),
        }
    }

    /// One row per frame: `f0,…,f{d-1},senone,speaker`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("senone".into());
        header.push("speaker".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.frames.row(i).iter().map(|v| v.as_f64().to_string()).collect();
            rec.push(self.senone_labels[i].to_string());
            rec.push(self.speaker_labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn splice_segments(raw: &RawCorpus, left: usize, right: usize) -> Result<Matrix<f64>> {
    let blocks = raw
        .segments
        .iter()
        .map(|(_, r)| {
            let rows: Vec<usize> = r.clone().collect();
            splice(&raw.frames.select_rows(&rows), left, right)
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&blocks)
}

/// Train and test partitions after splicing and global normalization.
///
/// Normalization statistics come from the training partition only and are
/// re-applied unchanged to the test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCorpus<T> {
    pub train: FrameBatch<T>,
    pub test: FrameBatch<T>,
}

pub fn prepare_corpus<T: Scalar>(spec: &SyntheticCorpusSpec) -> Result<PreparedCorpus<T>> {
    let raw_train = gen_corpus(spec, Partition::Train)?;
    let raw_test = gen_corpus(spec, Partition::Test)?;
    let spliced_train = splice_segments(&raw_train, spec.splice_left, spec.splice_right)?;
    let spliced_test = splice_segments(&raw_test, spec.splice_left, spec.splice_right)?;
    let (train_frames, stats) = normalize(&spliced_train)?;
    let test_frames = stats.apply(&spliced_test)?;
    let stats_t = stats.cast::<T>();
    let train = FrameBatch {
        frames: train_frames.cast(),
        senone_labels: raw_train.senone_labels,
        speaker_labels: raw_train.speaker_labels,
        n_senones: spec.n_senones,
        n_speakers: spec.n_speakers,
        norm: Some(stats_t.clone()),
    };
    let test = FrameBatch {
        frames: test_frames.cast(),
        senone_labels: raw_test.senone_labels,
        speaker_labels: raw_test.speaker_labels,
        n_senones: spec.n_senones,
        n_speakers: spec.total_speakers(),
        norm: Some(stats_t),
    };
    train.validate()?;
    test.validate()?;
    Ok(PreparedCorpus { train, test })
}
