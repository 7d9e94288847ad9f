//! JSON model checkpoints.
//!
//! A checkpoint file is an envelope `{"format", "version", "crc32", "body"}`.
//! The body holds every layer's weights and biases widened to `f64`, the
//! hyperparameters used to produce the model and the label vocabulary sizes.
//! Floats are written with shortest round-trip formatting, so loading returns
//! the saved values exactly. The checksum covers the body text byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::data::FrameBatch;
use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::model::{AcousticModel, Hyperparams, ModelParams};
use crate::nn::{Activation, Dense, LayerSpec, Mlp};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "sit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    /// Baseline stack trained on the senone loss alone.
    Si,
    /// Adversarially trained extractor and senone classifier plus the speaker classifier.
    Sit,
    /// A model adapted to one test speaker.
    Adapted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `in_dim × out_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerRecord {
    fn of<T: Scalar>(layer: &Dense<T>) -> Self {
        LayerRecord {
            in_dim: layer.in_dim(),
            out_dim: layer.out_dim(),
            activation: layer.activation,
            weights: layer.weights.as_slice().iter().map(|w| w.as_f64()).collect(),
            bias: layer.bias.iter().map(|b| b.as_f64()).collect(),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.in_dim, self.out_dim, self.activation)
    }

    fn to_dense<T: Scalar>(&self) -> Result<Dense<T>> {
        self.spec().validate()?;
        let weights = Matrix::from_vec(self.in_dim, self.out_dim, self.weights.clone())
            .map_err(|_| {
                SitError::Checkpoint(format!(
                    "layer {}x{} stores {} weights",
                    self.in_dim,
                    self.out_dim,
                    self.weights.len()
                ))
            })?
            .cast();
        let bias = self.bias.iter().map(|&b| T::lit(b)).collect();
        Dense::from_parts(weights, bias, self.activation)
            .map_err(|e| SitError::Checkpoint(format!("malformed layer: {e}")))
    }
}

fn records<T: Scalar>(mlp: &Mlp<T>) -> Vec<LayerRecord> {
    mlp.layers().iter().map(LayerRecord::of).collect()
}

fn rebuild<T: Scalar>(layers: &[LayerRecord]) -> Result<Mlp<T>> {
    let dense = layers.iter().map(LayerRecord::to_dense).collect::<Result<Vec<_>>>()?;
    Mlp::new(dense).map_err(|e| SitError::Checkpoint(format!("layers do not chain: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub input_dim: usize,
    /// Senone vocabulary size `|Q|`.
    pub n_senones: usize,
    /// Speaker vocabulary size `|A|` of the corpus the model was trained on.
    pub n_speakers: usize,
    /// Split point between feature extractor and senone classifier.
    pub n_h: usize,
    pub hyper: Hyperparams,
    /// Full acoustic stack, feature extractor layers first.
    pub acoustic: Vec<LayerRecord>,
    pub speaker: Option<Vec<LayerRecord>>,
    /// Set on adapted checkpoints.
    pub adapted_speaker: Option<usize>,
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    format: &'a str,
    version: u32,
    crc32: u32,
    body: &'a RawValue,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn<'a> {
    format: String,
    version: u32,
    crc32: u32,
    #[serde(borrow)]
    body: &'a RawValue,
}

impl Checkpoint {
    pub fn from_si<T: Scalar>(stack: &Mlp<T>, hyper: &Hyperparams, n_speakers: usize) -> Result<Self> {
        let acoustic = records(stack);
        let (input_dim, n_senones) = match (stack.input_dim(), stack.output_dim()) {
            (Some(i), Some(o)) => (i, o),
            _ => return Err(SitError::Checkpoint("cannot save an empty stack".into())),
        };
        Ok(Checkpoint {
            kind: CheckpointKind::Si,
            input_dim,
            n_senones,
            n_speakers,
            n_h: hyper.n_h,
            hyper: hyper.clone(),
            acoustic,
            speaker: None,
            adapted_speaker: None,
        })
    }

    pub fn from_sit<T: Scalar>(params: &ModelParams<T>, hyper: &Hyperparams) -> Self {
        Checkpoint {
            kind: CheckpointKind::Sit,
            input_dim: params.acoustic.input_dim(),
            n_senones: params.acoustic.n_senones(),
            n_speakers: params.n_speakers(),
            n_h: params.acoustic.n_h(),
            hyper: hyper.clone(),
            acoustic: records(&params.acoustic.stack()),
            speaker: Some(records(&params.speaker)),
            adapted_speaker: None,
        }
    }

    /// Adapted copy of `base`: same metadata, new acoustic weights, no speaker classifier.
    pub fn adapted<T: Scalar>(base: &Checkpoint, model: &AcousticModel<T>, speaker: usize) -> Self {
        Checkpoint {
            kind: CheckpointKind::Adapted,
            acoustic: records(&model.stack()),
            n_h: model.n_h(),
            speaker: None,
            adapted_speaker: Some(speaker),
            ..base.clone()
        }
    }

    pub fn stack<T: Scalar>(&self) -> Result<Mlp<T>> {
        rebuild(&self.acoustic)
    }

    pub fn acoustic_model<T: Scalar>(&self) -> Result<AcousticModel<T>> {
        let stack = self.stack()?;
        if self.n_h == 0 || self.n_h >= stack.len() {
            return Err(SitError::Checkpoint(format!(
                "split depth {} invalid for a {}-layer stack",
                self.n_h,
                stack.len()
            )));
        }
        let (feature, senone) = stack.split_at(self.n_h);
        AcousticModel::new(feature, senone)
    }

    pub fn model_params<T: Scalar>(&self) -> Result<ModelParams<T>> {
        let speaker = self
            .speaker
            .as_ref()
            .ok_or_else(|| SitError::Checkpoint(format!("{:?} checkpoint has no speaker classifier", self.kind)))?;
        ModelParams::new(self.acoustic_model()?, rebuild(speaker)?)
    }

    /// Metadata must agree with the stored layers.
    pub fn validate(&self) -> Result<()> {
        let stack: Mlp<f64> = self.stack()?;
        if stack.input_dim() != Some(self.input_dim) || stack.output_dim() != Some(self.n_senones) {
            return Err(SitError::Checkpoint(format!(
                "header says {} -> {} but layers map {:?} -> {:?}",
                self.input_dim,
                self.n_senones,
                stack.input_dim(),
                stack.output_dim()
            )));
        }
        self.acoustic_model::<f64>()?;
        if self.speaker.is_some() {
            let params = self.model_params::<f64>()?;
            if params.n_speakers() != self.n_speakers {
                return Err(SitError::Checkpoint(format!(
                    "header says {} speakers but the speaker classifier predicts {}",
                    self.n_speakers,
                    params.n_speakers()
                )));
            }
        }
        Ok(())
    }

    /// Fails when the corpus frames or senone vocabulary do not fit the model.
    pub fn check_corpus<T: Scalar>(&self, corpus: &FrameBatch<T>) -> Result<()> {
        if corpus.dim() != self.input_dim {
            return Err(SitError::arg(format!(
                "corpus frames are {}-dimensional but the checkpoint expects {}",
                corpus.dim(),
                self.input_dim
            )));
        }
        if corpus.n_senones != self.n_senones {
            return Err(SitError::arg(format!(
                "corpus has {} senones but the checkpoint predicts {}",
                corpus.n_senones, self.n_senones
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let body = serde_json::to_string(self)?;
        let raw = RawValue::from_string(body)?;
        let envelope = EnvelopeOut {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            crc32: crc32fast::hash(raw.get().as_bytes()),
            body: &raw,
        };
        Ok(serde_json::to_string(&envelope)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let envelope: EnvelopeIn<'_> =
            serde_json::from_str(text).map_err(|e| SitError::Checkpoint(format!("unreadable envelope: {e}")))?;
        if envelope.format != CHECKPOINT_FORMAT {
            return Err(SitError::Checkpoint(format!("unknown format {:?}", envelope.format)));
        }
        if envelope.version != CHECKPOINT_VERSION {
            return Err(SitError::Checkpoint(format!(
                "unsupported version {}",
                envelope.version
            )));
        }
        let computed = crc32fast::hash(envelope.body.get().as_bytes());
        if computed != envelope.crc32 {
            return Err(SitError::Checkpoint(format!(
                "checksum mismatch: stored {:#010x}, computed {computed:#010x}",
                envelope.crc32
            )));
        }
        let ckpt: Checkpoint = serde_json::from_str(envelope.body.get())
            .map_err(|e| SitError::Checkpoint(format!("malformed body: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream;
    use rand::Rng;

    fn stack(seed: u64) -> Mlp<f64> {
        let specs = [
            LayerSpec::new(4, 6, Activation::Relu),
            LayerSpec::new(6, 5, Activation::Tanh),
            LayerSpec::new(5, 3, Activation::Linear),
        ];
        let mut m = Mlp::init(&specs, &mut stream(seed, "t", 0)).unwrap();
        let mut rng = stream(seed, "bias", 0);
        for layer in m.layers_mut() {
            for b in &mut layer.bias {
                *b = rng.random_range(-1.0..1.0) * 1e-3;
            }
        }
        m
    }

    fn hyper() -> Hyperparams {
        Hyperparams {
            n_h: 1,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn si_round_trip_is_exact() {
        let m = stack(3);
        let ckpt = Checkpoint::from_si(&m, &hyper(), 4).unwrap();
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.stack::<f64>().unwrap(), m);
        assert_eq!(back.to_json().unwrap(), ckpt.to_json().unwrap());
    }

    #[test]
    fn sit_round_trip_restores_all_groups() {
        let acoustic = AcousticModel::new(stack(4).split_at(1).0, stack(4).split_at(1).1).unwrap();
        let speaker = Mlp::init(&[LayerSpec::new(6, 3, Activation::Linear)], &mut stream(5, "s", 0)).unwrap();
        let params = ModelParams::new(acoustic, speaker).unwrap();
        let ckpt = Checkpoint::from_sit(&params, &hyper());
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back.model_params::<f64>().unwrap(), params);
        assert_eq!(back.n_speakers, 3);
    }

    #[test]
    fn f32_models_survive_the_f64_body() {
        let m: Mlp<f32> = stack(6).cast();
        let ckpt = Checkpoint::from_si(&m, &hyper(), 2).unwrap();
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back.stack::<f32>().unwrap(), m);
    }

    #[test]
    fn corruption_is_detected() {
        let text = Checkpoint::from_si(&stack(7), &hyper(), 2).unwrap().to_json().unwrap();

        // flip one digit inside the body
        let pos = text.find("\"weights\":[").unwrap() + 12;
        let mut bytes = text.clone().into_bytes();
        bytes[pos] = if bytes[pos] == b'1' { b'2' } else { b'1' };
        let err = Checkpoint::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        let err = Checkpoint::from_json(&text[..text.len() / 2]).unwrap_err();
        assert!(matches!(err, SitError::Checkpoint(_)));

        let wrong = text.replacen(CHECKPOINT_FORMAT, "other", 1);
        assert!(Checkpoint::from_json(&wrong)
            .unwrap_err()
            .to_string()
            .contains("format"));
    }

    #[test]
    fn inconsistent_metadata_is_rejected() {
        let mut ckpt = Checkpoint::from_si(&stack(8), &hyper(), 2).unwrap();
        ckpt.n_senones = 7;
        assert!(Checkpoint::from_json(&ckpt.to_json().unwrap()).is_err());
        let mut ckpt = Checkpoint::from_si(&stack(8), &hyper(), 2).unwrap();
        ckpt.n_h = 3;
        assert!(Checkpoint::from_json(&ckpt.to_json().unwrap()).is_err());
    }

    #[test]
    fn adapted_keeps_metadata_and_drops_speaker_head() {
        let base = Checkpoint::from_si(&stack(9), &hyper(), 2).unwrap();
        let model = base.acoustic_model::<f64>().unwrap();
        let a = Checkpoint::adapted(&base, &model, 5);
        assert_eq!(a.kind, CheckpointKind::Adapted);
        assert_eq!(a.adapted_speaker, Some(5));
        assert_eq!(a.acoustic, base.acoustic);
        assert!(a.model_params::<f64>().is_err());
    }
}
