//! Run configuration shared by all CLI commands.
//!
//! Configs are JSON. Every section is optional and falls back to its defaults,
//! but unknown keys anywhere are rejected. [`RunConfig::load`] validates before
//! returning, so a loaded config is always internally consistent.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptConfig;
use crate::data::SyntheticCorpusSpec;
use crate::error::{Result, SitError};
use crate::eval::{ProbeConfig, TsneConfig};
use crate::model::{AcousticTopology, Hyperparams, SpeakerTopology};

/// Which frames `project` embeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    /// Restrict to one senone; `None` projects every senone.
    pub senone: Option<usize>,
    /// How many speakers to include, lowest ids first.
    pub max_speakers: usize,
    /// Frames per included speaker, taken in corpus order.
    pub frames_per_speaker: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            senone: Some(0),
            max_speakers: 4,
            frames_per_speaker: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Where `gen-data` writes corpora and where other commands look for them.
    pub data_dir: PathBuf,
    /// Root directory for run outputs.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: SyntheticCorpusSpec,
    pub acoustic: AcousticTopology,
    pub speaker: SpeakerTopology,
    pub hyper: Hyperparams,
    /// Learning rate for the adversarial stage; `None` reuses `hyper.mu`.
    pub sit_mu: Option<f64>,
    /// Epochs for the adversarial stage; `None` reuses `hyper.epochs`.
    pub sit_epochs: Option<usize>,
    pub adapt: AdaptConfig,
    pub probe: ProbeConfig,
    pub tsne: TsneConfig,
    pub projection: ProjectionConfig,
    /// Seed for the probe split and t-SNE initialization.
    pub eval_seed: u64,
    /// Write an extra checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: SyntheticCorpusSpec::default(),
            acoustic: AcousticTopology::default(),
            speaker: SpeakerTopology::default(),
            hyper: Hyperparams::default(),
            sit_mu: None,
            sit_epochs: None,
            adapt: AdaptConfig::default(),
            probe: ProbeConfig::default(),
            tsne: TsneConfig::default(),
            projection: ProjectionConfig::default(),
            eval_seed: 3,
            checkpoint_every: None,
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg = Self::from_json(&text).map_err(|e| match e {
            SitError::Config { field, reason } if field.is_empty() => {
                SitError::config(path.display().to_string(), reason)
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| SitError::config("", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hyperparameters of the adversarial stage.
    pub fn sit_hyper(&self) -> Hyperparams {
        Hyperparams {
            mu: self.sit_mu.unwrap_or(self.hyper.mu),
            epochs: self.sit_epochs.unwrap_or(self.hyper.epochs),
            ..self.hyper.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.acoustic.validate()?;
        self.speaker.validate()?;
        self.hyper.validate(self.acoustic.hidden_layers())?;
        self.sit_hyper().validate(self.acoustic.hidden_layers())?;
        self.adapt
            .validate(self.acoustic.hidden_layers() + 1)
            .map_err(|e| match e {
                SitError::Argument(reason) => SitError::config("adapt.layers_to_adapt", reason),
                other => other,
            })?;
        if self.acoustic.input_dim != self.corpus.input_dim() {
            return Err(SitError::config(
                "acoustic.input_dim",
                format!(
                    "{} does not match the spliced corpus width {}",
                    self.acoustic.input_dim,
                    self.corpus.input_dim()
                ),
            ));
        }
        if self.acoustic.n_senones != self.corpus.n_senones {
            return Err(SitError::config(
                "acoustic.n_senones",
                format!(
                    "{} does not match corpus.n_senones {}",
                    self.acoustic.n_senones, self.corpus.n_senones
                ),
            ));
        }
        if self.speaker.n_speakers != self.corpus.n_speakers {
            return Err(SitError::config(
                "speaker.n_speakers",
                format!(
                    "{} does not match corpus.n_speakers {}",
                    self.speaker.n_speakers, self.corpus.n_speakers
                ),
            ));
        }
        if let Some(mu) = self.sit_mu {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(SitError::config("sit_mu", "must be finite and > 0"));
            }
        }
        if self.probe.hidden.contains(&0) {
            return Err(SitError::config("probe.hidden", "widths must be >= 1"));
        }
        if self.probe.batch_size == 0 || self.probe.epochs == 0 {
            return Err(SitError::config("probe", "batch_size and epochs must be >= 1"));
        }
        if !(self.probe.train_fraction > 0.0 && self.probe.train_fraction < 1.0) {
            return Err(SitError::config("probe.train_fraction", "must lie in (0, 1)"));
        }
        if !(self.probe.mu > 0.0) || !self.probe.mu.is_finite() {
            return Err(SitError::config("probe.mu", "must be finite and > 0"));
        }
        if !(self.tsne.perplexity > 0.0) {
            return Err(SitError::config("tsne.perplexity", "must be > 0"));
        }
        if let Some(lr) = self.tsne.learning_rate {
            if !(lr > 0.0) {
                return Err(SitError::config("tsne.learning_rate", "must be > 0"));
            }
        }
        if self.projection.max_speakers == 0 || self.projection.frames_per_speaker == 0 {
            return Err(SitError::config(
                "projection",
                "max_speakers and frames_per_speaker must be >= 1",
            ));
        }
        if let Some(q) = self.projection.senone {
            if q >= self.corpus.n_senones {
                return Err(SitError::config(
                    "projection.senone",
                    format!("{q} >= corpus.n_senones"),
                ));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(SitError::config("checkpoint_every", "must be >= 1 when set"));
        }
        Ok(())
    }
}
