use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sit_core::config::RunConfig;
use sit_core::eval::ProjectionMethod;
use sit_core::pipeline::{self, TrainMode, TEST_CORPUS, TRAIN_CORPUS};
use sit_core::{Result, SitError};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

/// Speaker-invariant training of feed-forward acoustic models.
#[derive(Parser)]
#[command(name = "sit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed this command uses from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and test corpora.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: paths.data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an SI baseline or an SIT model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "si")]
        mode: TrainMode,
        /// Training corpus (default: paths.data_dir/train.sitc).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// SI checkpoint to start SIT from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "n-h")]
        n_h: Option<usize>,
        /// Output directory (default: paths.out_dir/<mode>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adapt a checkpoint to each held-out speaker.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test corpus (default: paths.data_dir/test.sitc).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report accuracy, speaker probe and invariance ratio as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a 2-D projection of deep features as CSV.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "pca")]
        method: ProjectionMethod,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline and print the comparison tables.
    Repro {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn or_data(cfg: &RunConfig, given: Option<PathBuf>, file: &str) -> PathBuf {
    given.unwrap_or_else(|| cfg.paths.data_dir.join(file))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.corpus.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.paths.data_dir.clone());
            let summary = pipeline::cmd_gen_data(&cfg, &out)?;
            println!("{summary}");
        }
        Command::Train {
            common,
            mode,
            corpus,
            checkpoint,
            lambda,
            n_h,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.hyper.seed = s;
            }
            if let Some(l) = lambda {
                cfg.hyper.lambda = l;
            }
            if let Some(n) = n_h {
                cfg.hyper.n_h = n;
            }
            cfg.validate()?;
            let corpus = or_data(&cfg, corpus, TRAIN_CORPUS);
            let tag = match mode {
                TrainMode::Si => "si",
                TrainMode::Sit => "sit",
            };
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.join(tag));
            print_json(&pipeline::cmd_train(&cfg, mode, &corpus, checkpoint.as_deref(), &out)?)?;
        }
        Command::Adapt {
            common,
            checkpoint,
            corpus,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.adapt.seed = s;
            }
            let corpus = or_data(&cfg, corpus, TEST_CORPUS);
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("adapt"));
            print_json(&pipeline::cmd_adapt(&cfg, &checkpoint, &corpus, &out)?)?;
        }
        Command::Eval {
            common,
            checkpoint,
            corpus,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.eval_seed = s;
            }
            let corpus = or_data(&cfg, corpus, TEST_CORPUS);
            let report = pipeline::cmd_eval(&cfg, &checkpoint, &corpus, out.as_deref())?;
            if out.is_none() {
                print_json(&report)?;
            }
        }
        Command::Project {
            common,
            checkpoint,
            corpus,
            method,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.eval_seed = s;
            }
            let corpus = or_data(&cfg, corpus, TRAIN_CORPUS);
            print_json(&pipeline::cmd_project(&cfg, &checkpoint, &corpus, method, &out)?)?;
        }
        Command::Repro { common, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.corpus.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("repro"));
            let report = pipeline::cmd_repro(&cfg, &out)?;
            print!("{}", report.to_markdown());
            println!("\nwritten to {}", Path::new(&out).display());
        }
    }
    Ok(())
}

fn exit_code(err: &SitError) -> u8 {
    match err {
        SitError::Config { .. } => EXIT_CONFIG,
        SitError::Io(_) | SitError::Format(_) | SitError::Checkpoint(_) | SitError::Json(_) | SitError::Csv(_) => {
            EXIT_IO
        }
        SitError::Divergence { .. } | SitError::Numeric(_) => EXIT_DIVERGED,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIT_LOG_LEVEL", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
