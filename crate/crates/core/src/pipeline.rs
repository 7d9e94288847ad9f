//! The commands behind the `sit` binary, as library functions.
//!
//! Every command writes a `manifest.json` next to its outputs recording the
//! fully materialized config it ran with, so a run directory is self-describing.
//! Outputs depend only on the config, the seeds in it and the input files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{crt_adapt, crt_adapt_with_targets};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::RunConfig;
use crate::data::{load_corpus, prepare_corpus, save_corpus, FrameBatch};
use crate::error::{Result, SitError};
use crate::eval::{
    agreement, centroid_separation, evaluate, frame_accuracy, project_2d, write_projection_csv, EvalReport,
    ProjectionMethod,
};
use crate::model::{split_pretrained, AcousticTopology, SpeakerTopology};
use crate::nn::Mlp;
use crate::trainer::{continue_si_with, continue_sit_with, init_acoustic, init_speaker, TrainLog};
use crate::ModelParams;

pub const TRAIN_CORPUS: &str = "train.sitc";
pub const TEST_CORPUS: &str = "test.sitc";
pub const MODEL_FILE: &str = "model.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BATCH_LOG: &str = "train_log.csv";
pub const EPOCH_LOG: &str = "epochs.csv";
pub const ADAPT_REPORT: &str = "adapt_report.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Si,
    Sit,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: BTreeMap<&'a str, String>,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, inputs: &[(&str, &Path)]) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        inputs: inputs.iter().map(|(k, p)| (*k, p.display().to_string())).collect(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        SitError::Io(io) => SitError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn load_batch(path: &Path) -> Result<FrameBatch<f64>> {
    load_corpus(path).map_err(|e| match e {
        SitError::Io(io) => SitError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub train_frames: usize,
    pub test_frames: usize,
    pub dim: usize,
    pub n_senones: usize,
    pub train_speakers: usize,
    pub test_speakers: usize,
}

impl std::fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "train: {} frames x {} dims, {} speakers; test: {} frames, {} speakers; {} senones",
            self.train_frames, self.dim, self.train_speakers, self.test_frames, self.test_speakers, self.n_senones
        )
    }
}

/// Writes `train.sitc` and `test.sitc` under `out_dir`.
pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<CorpusSummary> {
    cfg.corpus.validate()?;
    fs::create_dir_all(out_dir)?;
    let corpus = prepare_corpus::<f64>(&cfg.corpus)?;
    save_corpus(&corpus.train, &out_dir.join(TRAIN_CORPUS))?;
    save_corpus(&corpus.test, &out_dir.join(TEST_CORPUS))?;
    write_manifest(out_dir, "gen-data", cfg, &[])?;
    let summary = CorpusSummary {
        train_frames: corpus.train.len(),
        test_frames: corpus.test.len(),
        dim: corpus.train.dim(),
        n_senones: cfg.corpus.n_senones,
        train_speakers: cfg.corpus.n_speakers,
        test_speakers: cfg.corpus.n_test_speakers,
    };
    log::debug!("{summary}");
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub final_senone_accuracy: Option<f64>,
    pub final_speaker_accuracy: Option<f64>,
}

fn write_logs(log: &TrainLog, out_dir: &Path) -> Result<()> {
    log.write_csv(&out_dir.join(BATCH_LOG))?;
    log.write_epoch_csv(&out_dir.join(EPOCH_LOG))
}

fn periodic(every: Option<usize>, epoch: usize) -> bool {
    every.is_some_and(|k| (epoch + 1).is_multiple_of(k))
}

fn epoch_file(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("model_epoch{:03}.json", epoch + 1))
}

/// Trains an SI baseline from scratch, or an SIT model starting from `si_checkpoint`.
///
/// The acoustic topology's input width and senone count, and the speaker
/// classifier's output size, are taken from the corpus file.
pub fn cmd_train(
    cfg: &RunConfig,
    mode: TrainMode,
    train_corpus: &Path,
    si_checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<TrainSummary> {
    let corpus = load_batch(train_corpus)?;
    let mut cfg = cfg.clone();
    cfg.acoustic = AcousticTopology {
        input_dim: corpus.dim(),
        n_senones: corpus.n_senones,
        ..cfg.acoustic
    };
    cfg.speaker = SpeakerTopology {
        n_speakers: corpus.n_speakers,
        ..cfg.speaker
    };
    cfg.acoustic.validate()?;
    cfg.speaker.validate()?;
    fs::create_dir_all(out_dir)?;
    let every = cfg.checkpoint_every;

    let (ckpt, log) = match mode {
        TrainMode::Si => {
            let hyper = cfg.hyper.clone();
            hyper.validate(cfg.acoustic.hidden_layers())?;
            let init: Mlp<f64> = init_acoustic(&cfg.acoustic, hyper.seed)?;
            let (stack, log) = continue_si_with(init, &corpus, &hyper, |epoch, m| {
                if periodic(every, epoch) {
                    Checkpoint::from_si(m, &hyper, corpus.n_speakers)?.save(&epoch_file(out_dir, epoch))?;
                }
                Ok(())
            })?;
            write_manifest(out_dir, "train si", &cfg, &[("corpus", train_corpus)])?;
            (Checkpoint::from_si(&stack, &hyper, corpus.n_speakers)?, log)
        }
        TrainMode::Sit => {
            let si_path = si_checkpoint
                .ok_or_else(|| SitError::config("checkpoint", "sit mode requires an SI checkpoint to start from"))?;
            let si = load_checkpoint(si_path)?;
            if si.kind != CheckpointKind::Si {
                return Err(SitError::config(
                    "checkpoint",
                    format!("sit mode starts from an SI checkpoint, got {:?}", si.kind),
                ));
            }
            si.check_corpus(&corpus)?;
            let hyper = cfg.sit_hyper();
            let stack: Mlp<f64> = si.stack()?;
            cfg.acoustic.hidden = stack.specs()[..stack.len() - 1].iter().map(|s| s.out_dim).collect();
            hyper.validate(cfg.acoustic.hidden_layers())?;
            let acoustic = split_pretrained(&stack, hyper.n_h)?;
            let speaker = init_speaker(&cfg.speaker, acoustic.feature_dim(), hyper.seed)?;
            let params = ModelParams::new(acoustic, speaker)?;
            let (params, log) = continue_sit_with(params, &corpus, &hyper, |epoch, p| {
                if periodic(every, epoch) {
                    Checkpoint::from_sit(p, &hyper).save(&epoch_file(out_dir, epoch))?;
                }
                Ok(())
            })?;
            write_manifest(
                out_dir,
                "train sit",
                &cfg,
                &[("corpus", train_corpus), ("si_checkpoint", si_path)],
            )?;
            (Checkpoint::from_sit(&params, &hyper), log)
        }
    };
    let path = out_dir.join(MODEL_FILE);
    ckpt.save(&path)?;
    write_logs(&log, out_dir)?;
    Ok(TrainSummary {
        checkpoint: path,
        epochs: log.epochs.len(),
        final_senone_accuracy: log.final_senone_accuracy(),
        final_speaker_accuracy: log.epochs.last().and_then(|e| e.speaker_accuracy),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptRow {
    pub speaker: usize,
    pub frames: usize,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    /// Fraction of first-pass targets that match the reference labels.
    pub pseudo_label_agreement: f64,
    /// Accuracy after adapting on the reference labels instead.
    pub oracle_accuracy: f64,
}

fn adapted_file(out_dir: &Path, speaker: usize) -> PathBuf {
    out_dir.join(format!("adapted_speaker{speaker}.json"))
}

/// Adapts `checkpoint` separately to every speaker in `test_corpus`.
///
/// Speakers are processed in parallel; rows come back in speaker order.
pub fn cmd_adapt(cfg: &RunConfig, checkpoint: &Path, test_corpus: &Path, out_dir: &Path) -> Result<Vec<AdaptRow>> {
    let base = load_checkpoint(checkpoint)?;
    let corpus = load_batch(test_corpus)?;
    base.check_corpus(&corpus)?;
    let model = base.acoustic_model::<f64>()?;
    cfg.adapt.validate(model.depth())?;
    fs::create_dir_all(out_dir)?;
    let training_mu = base.hyper.mu;

    let rows = corpus
        .speakers()
        .into_par_iter()
        .map(|speaker| {
            let sub = corpus.speaker_subset(speaker);
            let outcome = crt_adapt(&model, &sub.frames, &cfg.adapt, training_mu)?;
            let oracle = crt_adapt_with_targets(&model, &sub.frames, &sub.senone_labels, &cfg.adapt, training_mu)?;
            Checkpoint::adapted(&base, &outcome.model, speaker).save(&adapted_file(out_dir, speaker))?;
            Ok(AdaptRow {
                speaker,
                frames: sub.len(),
                pre_accuracy: frame_accuracy(&model, &sub)?,
                post_accuracy: frame_accuracy(&outcome.model, &sub)?,
                pseudo_label_agreement: agreement(&outcome.targets, &sub.senone_labels),
                oracle_accuracy: frame_accuracy(&oracle, &sub)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut w = csv::Writer::from_path(out_dir.join(ADAPT_REPORT))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_manifest(
        out_dir,
        "adapt",
        cfg,
        &[("checkpoint", checkpoint), ("corpus", test_corpus)],
    )?;
    Ok(rows)
}

/// Senone accuracy, speaker probe and invariance ratio of a checkpoint on a corpus.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, corpus: &Path, out_report: Option<&Path>) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let batch = load_batch(corpus)?;
    ckpt.check_corpus(&batch)?;
    let report = evaluate(&ckpt.acoustic_model::<f64>()?, &batch, &cfg.probe, cfg.eval_seed)?;
    if let Some(path) = out_report {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Indices of the frames `project` embeds, per the projection config.
pub fn projection_indices<T: crate::Scalar>(cfg: &RunConfig, batch: &FrameBatch<T>) -> Vec<usize> {
    let p = &cfg.projection;
    let speakers: Vec<usize> = batch.speakers().into_iter().take(p.max_speakers).collect();
    let mut out = Vec::new();
    for a in speakers {
        out.extend(
            batch
                .indices_where(|q, s| s == a && p.senone.is_none_or(|want| want == q))
                .into_iter()
                .take(p.frames_per_speaker),
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub points: usize,
    /// Between-speaker centroid separation in the embedding.
    pub centroid_separation: f64,
}

/// Embeds deep features of selected frames in 2-D and writes `x,y,senone,speaker`.
pub fn cmd_project(
    cfg: &RunConfig,
    checkpoint: &Path,
    corpus: &Path,
    method: ProjectionMethod,
    out_csv: &Path,
) -> Result<ProjectionSummary> {
    let ckpt = load_checkpoint(checkpoint)?;
    let batch = load_batch(corpus)?;
    ckpt.check_corpus(&batch)?;
    let model = ckpt.acoustic_model::<f64>()?;
    let sel = batch.select(&projection_indices(cfg, &batch));
    let features = model.deep_features(&sel.frames)?;
    let coords = project_2d(&features, method, &cfg.tsne, cfg.eval_seed)?;
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_projection_csv(out_csv, &coords, &sel.senone_labels, &sel.speaker_labels)?;
    Ok(ProjectionSummary {
        points: sel.len(),
        centroid_separation: centroid_separation(&coords, &sel.speaker_labels)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub heldout_accuracy: f64,
    pub train_accuracy: f64,
    /// Probe and ratio measured on training-speaker frames.
    pub speaker_probe: f64,
    pub invariance_ratio: f64,
    pub tsne_centroid_separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedRow {
    pub system: String,
    pub rows: Vec<AdaptRow>,
    /// Frame-weighted means over held-out speakers.
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    pub oracle_accuracy: f64,
}

impl AdaptedRow {
    fn new(system: &str, rows: Vec<AdaptRow>) -> Self {
        let n: usize = rows.iter().map(|r| r.frames).sum();
        let mean = |f: fn(&AdaptRow) -> f64| rows.iter().map(|r| f(r) * r.frames as f64).sum::<f64>() / n.max(1) as f64;
        AdaptedRow {
            system: system.into(),
            pre_accuracy: mean(|r| r.pre_accuracy),
            post_accuracy: mean(|r| r.post_accuracy),
            oracle_accuracy: mean(|r| r.oracle_accuracy),
            rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub systems: Vec<SystemRow>,
    pub adapted: Vec<AdaptedRow>,
    pub note: String,
}

impl ReproReport {
    /// Markdown tables: unadapted systems, then per-speaker adaptation.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Unadapted systems ({})\n", self.note);
        let _ = writeln!(
            s,
            "| System | held-out acc | train acc | speaker probe | invariance ratio | t-SNE centroid sep |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for r in &self.systems {
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.system,
                r.heldout_accuracy,
                r.train_accuracy,
                r.speaker_probe,
                r.invariance_ratio,
                r.tsne_centroid_separation
            );
        }
        let _ = writeln!(s, "\nSpeaker adaptation on held-out speakers\n");
        let _ = writeln!(
            s,
            "| System | speaker | unadapted | adapted | oracle targets | target agreement |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for a in &self.adapted {
            for r in &a.rows {
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    a.system, r.speaker, r.pre_accuracy, r.post_accuracy, r.oracle_accuracy, r.pseudo_label_agreement
                );
            }
            let _ = writeln!(
                s,
                "| {} | all | {:.4} | {:.4} | {:.4} | |",
                a.system, a.pre_accuracy, a.post_accuracy, a.oracle_accuracy
            );
        }
        s
    }
}

/// gen-data, train SI, train SIT, adapt both, evaluate, project; then tabulate.
pub fn cmd_repro(cfg: &RunConfig, out_dir: &Path) -> Result<ReproReport> {
    cfg.validate()?;
    let data = out_dir.join("data");
    cmd_gen_data(cfg, &data)?;
    let (train, test) = (data.join(TRAIN_CORPUS), data.join(TEST_CORPUS));

    log::info!("training SI baseline");
    let si = cmd_train(cfg, TrainMode::Si, &train, None, &out_dir.join("si"))?;
    log::info!("training SIT from the baseline");
    let sit = cmd_train(cfg, TrainMode::Sit, &train, Some(&si.checkpoint), &out_dir.join("sit"))?;

    let (si_adapt, sit_adapt) = rayon::join(
        || cmd_adapt(cfg, &si.checkpoint, &test, &out_dir.join("adapt_si")),
        || cmd_adapt(cfg, &sit.checkpoint, &test, &out_dir.join("adapt_sit")),
    );

    let mut systems = Vec::new();
    for (name, ckpt) in [("SI", &si.checkpoint), ("SIT", &sit.checkpoint)] {
        let tag = name.to_lowercase();
        let heldout = cmd_eval(cfg, ckpt, &test, Some(&out_dir.join(format!("eval_{tag}_test.json"))))?;
        let on_train = cmd_eval(cfg, ckpt, &train, Some(&out_dir.join(format!("eval_{tag}_train.json"))))?;
        let proj = cmd_project(
            cfg,
            ckpt,
            &train,
            ProjectionMethod::Tsne,
            &out_dir.join(format!("tsne_{tag}.csv")),
        )?;
        systems.push(SystemRow {
            system: name.into(),
            heldout_accuracy: heldout.senone_frame_accuracy,
            train_accuracy: on_train.senone_frame_accuracy,
            speaker_probe: on_train.speaker_probe_accuracy,
            invariance_ratio: on_train.invariance_ratio,
            tsne_centroid_separation: proj.centroid_separation,
        });
    }
    let report = ReproReport {
        systems,
        adapted: vec![
            AdaptedRow::new("SA-SI", si_adapt?),
            AdaptedRow::new("SA-SIT", sit_adapt?),
        ],
        note: crate::eval::METRIC_NOTE.into(),
    };
    fs::write(out_dir.join("comparison.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(out_dir.join("comparison.md"), report.to_markdown())?;
    write_manifest(out_dir, "repro", cfg, &[])?;
    Ok(report)
}
