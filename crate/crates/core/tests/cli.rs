use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sit_core::checkpoint::{Checkpoint, CheckpointKind};
use sit_core::eval::EvalReport;
use sit_core::pipeline::TrainSummary;

const TINY: &str = r#"{
  "corpus": {"n_senones": 4, "n_speakers": 3, "n_test_speakers": 2, "frames_per_speaker_per_senone": 15},
  "acoustic": {"hidden": [12, 12, 12], "n_senones": 4},
  "speaker": {"hidden": [8], "n_speakers": 3},
  "hyper": {"epochs": 2, "batch_size": 16},
  "adapt": {"epochs_adapt": 2},
  "probe": {"epochs": 2},
  "tsne": {"perplexity": 5.0, "iterations": 120},
  "projection": {"frames_per_speaker": 8}
}"#;

fn sit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sit"))
        .args(args)
        .current_dir(dir)
        .env("SIT_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Run {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        fs::write(dir.join("cfg.json"), config).unwrap();
        Run { _tmp: tmp, dir }
    }

    fn sit(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", "cfg.json"];
        all.splice(0..0, args.iter().take(1).copied());
        all.extend(args.iter().skip(1).copied());
        sit(&self.dir, &all)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

fn train_si(run: &Run) -> TrainSummary {
    assert!(run.sit(&["gen-data", "--out", "data"]).status.success());
    serde_json::from_str(&ok(&run.sit(&[
        "train",
        "--mode",
        "si",
        "--corpus",
        "data/train.sitc",
        "--out",
        "si",
    ])))
    .unwrap()
}

#[test]
fn gen_data_counts_and_is_byte_identical() {
    let run = Run::new("{}");
    let summary = ok(&sit(&run.dir, &["gen-data", "--out", "a"]));
    assert!(summary.contains("train: 16000 frames"), "{summary}");
    ok(&sit(&run.dir, &["gen-data", "--out", "b"]));
    for f in ["train.sitc", "test.sitc"] {
        assert_eq!(
            fs::read(run.path("a").join(f)).unwrap(),
            fs::read(run.path("b").join(f)).unwrap()
        );
    }
    ok(&sit(&run.dir, &["gen-data", "--out", "c", "--seed", "9"]));
    assert_ne!(
        fs::read(run.path("a/train.sitc")).unwrap(),
        fs::read(run.path("c/train.sitc")).unwrap()
    );
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let run = Run::new(r#"{"corpus": {"n_speakers": 0}}"#);
    let out = run.sit(&["gen-data", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("corpus.n_speakers"), "{}", stderr(&out));

    let run = Run::new(r#"{"hyper": {"mu": 0.1, "bogus": true}}"#);
    let out = run.sit(&["gen-data", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));

    let run = Run::new(TINY);
    ok(&run.sit(&["gen-data", "--out", "data"]));
    let out = run.sit(&["train", "--mode", "sit", "--corpus", "data/train.sitc", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("SI checkpoint"), "{}", stderr(&out));

    let out = run.sit(&["train", "--n-h", "3", "--corpus", "data/train.sitc", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_and_divergence_exit_codes() {
    let run = Run::new(TINY);
    let out = run.sit(&["train", "--corpus", "missing.sitc", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));

    let si = train_si(&run);
    let text = fs::read_to_string(run.dir.join(&si.checkpoint)).unwrap();
    fs::write(run.path("broken.json"), &text[..text.len() - 10]).unwrap();
    let out = run.sit(&["eval", "--checkpoint", "broken.json", "--corpus", "data/test.sitc"]);
    assert_eq!(out.status.code(), Some(3));

    let hot = Run::new(&TINY.replace(r#""epochs": 2,"#, r#""epochs": 2, "mu": 1e9,"#));
    assert!(hot.sit(&["gen-data", "--out", "data"]).status.success());
    let out = hot.sit(&["train", "--corpus", "data/train.sitc", "--out", "si"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));
}

#[test]
fn train_logs_and_eval_agree() {
    let run = Run::new(&TINY.replace(r#""hyper": {"#, r#""checkpoint_every": 1, "hyper": {"#));
    let si = train_si(&run);
    // 4 senones × 3 speakers × 15 frames = 180 frames, batch 16 → 12 batches
    let rows = fs::read_to_string(run.path("si/train_log.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(rows, 2 * 12);
    assert!(run.path("si/model_epoch001.json").exists() && run.path("si/model_epoch002.json").exists());

    let manifest = fs::read_to_string(run.path("si/manifest.json")).unwrap();
    assert!(
        manifest.contains("\"speaker_factor_rank\"") && manifest.contains("\"lambda\": 3.0"),
        "{manifest}"
    );

    let report: EvalReport = serde_json::from_str(&ok(&run.sit(&[
        "eval",
        "--checkpoint",
        "si/model.json",
        "--corpus",
        "data/train.sitc",
    ])))
    .unwrap();
    assert_eq!(Some(report.senone_frame_accuracy), si.final_senone_accuracy);
    assert!(!report.note.is_empty());

    let sit: TrainSummary = serde_json::from_str(&ok(&run.sit(&[
        "train",
        "--mode",
        "sit",
        "--corpus",
        "data/train.sitc",
        "--checkpoint",
        "si/model.json",
        "--lambda",
        "1.5",
        "--out",
        "sit",
    ])))
    .unwrap();
    let ckpt = Checkpoint::load(&run.dir.join(&sit.checkpoint)).unwrap();
    assert_eq!(ckpt.kind, CheckpointKind::Sit);
    assert_eq!(ckpt.hyper.lambda, 1.5);
    assert!(ckpt.model_params::<f64>().is_ok());

    let out = run.sit(&[
        "train",
        "--mode",
        "sit",
        "--corpus",
        "data/train.sitc",
        "--checkpoint",
        "sit/model.json",
        "--out",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn adapt_writes_one_checkpoint_and_row_per_speaker() {
    let run = Run::new(TINY);
    train_si(&run);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&ok(&run.sit(&[
        "adapt",
        "--checkpoint",
        "si/model.json",
        "--out",
        "ad",
    ])))
    .unwrap();
    assert_eq!(rows.len(), 2);
    let csv = fs::read_to_string(run.path("ad/adapt_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("speaker,frames,pre_accuracy,post_accuracy,pseudo_label_agreement"));
    for a in [3, 4] {
        let c = Checkpoint::load(&run.path(&format!("ad/adapted_speaker{a}.json"))).unwrap();
        assert_eq!(c.adapted_speaker, Some(a));
    }

    // no layers to adapt: every output model equals the input
    let frozen = Run::new(&TINY.replace(r#""adapt": {"epochs_adapt": 2}"#, r#""adapt": {"layers_to_adapt": []}"#));
    train_si(&frozen);
    ok(&frozen.sit(&["adapt", "--checkpoint", "si/model.json", "--out", "ad"]));
    let base = Checkpoint::load(&frozen.path("si/model.json")).unwrap();
    for a in [3, 4] {
        let c = Checkpoint::load(&frozen.path(&format!("ad/adapted_speaker{a}.json"))).unwrap();
        assert_eq!(c.acoustic, base.acoustic);
    }
}

#[test]
fn projections_repeat_exactly() {
    let run = Run::new(TINY);
    train_si(&run);
    for method in ["pca", "tsne"] {
        let a = format!("{method}_a.csv");
        let b = format!("{method}_b.csv");
        for out in [&a, &b] {
            ok(&run.sit(&[
                "project",
                "--checkpoint",
                "si/model.json",
                "--method",
                method,
                "--out",
                out,
            ]));
        }
        let first = fs::read(run.path(&a)).unwrap();
        assert_eq!(first, fs::read(run.path(&b)).unwrap());
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with("x,y,senone,speaker"));
        // senone 0 of the first 3 training speakers, 8 frames each
        assert_eq!(text.lines().count(), 1 + 3 * 8);
    }
}

#[test]
fn mismatched_corpus_is_described() {
    let run = Run::new(TINY);
    train_si(&run);
    let other = Run::new(
        &TINY
            .replace(r#""n_senones": 4, "n_speakers""#, r#""n_senones": 5, "n_speakers""#)
            .replace(
                r#""acoustic": {"hidden": [12, 12, 12], "n_senones": 4}"#,
                r#""acoustic": {"hidden": [12, 12, 12], "n_senones": 5}"#,
            ),
    );
    ok(&other.sit(&["gen-data", "--out", "data"]));
    let corpus = other.path("data/test.sitc");
    let out = run.sit(&[
        "eval",
        "--checkpoint",
        "si/model.json",
        "--corpus",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("5 senones"), "{}", stderr(&out));
}
