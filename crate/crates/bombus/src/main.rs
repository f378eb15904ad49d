//! `bombus` command line.
//!
//! Failures print one JSON line `{"error": kind, "message": text}` on stderr
//! and exit with status 1 (2 for argument errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bombus::config::{parse_config, resolve, EnsembleMode};
use bombus::pipeline::Pipeline;
use bombus::report::RenderOptions;
use bombus::serve::DEFAULT_MAX_BODY_BYTES;
use bombus::{Error, Result};
use bombus_core::ensemble::ScoreRows;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bombus", version, about = "Transfer-learning species classification pipeline")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value: `dotted.key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset preparation.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Write augmented copies of training images.
    Augment,
    /// Train the configured model into an artifact directory.
    Train {
        /// Artifact directory (default: $BOMBUS_MODEL_DIR or <output>/model).
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Top-3 predictions for images, or for the test split.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
    },
    /// Combine member probability matrices or models.
    Ensemble {
        #[arg(long, num_args = 1..)]
        members: Vec<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Score a probability matrix against truth labels.
    Evaluate {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Report accuracy at this k; repeatable.
        #[arg(long = "k")]
        k: Vec<usize>,
        #[arg(long)]
        train_counts: Option<PathBuf>,
    },
    /// Render one or more report JSON files.
    Report {
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Leave the negative class out of the per-class table.
        #[arg(long)]
        exclude_negative: bool,
    },
    /// Serve top-3 predictions over HTTP.
    Serve {
        /// Artifact directories; several form a softmax-sum ensemble.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value_t = DEFAULT_MAX_BODY_BYTES)]
        max_body_bytes: usize,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Validate, inject negatives, split and standardize.
    Build,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "softmax_sum")]
    SoftmaxSum,
    #[value(name = "encoder_composite")]
    EncoderComposite,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({"error": "usage", "message": first}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => parse_config(p, &cli.overrides)?,
        None => resolve(serde_json::json!({}), &cli.overrides)?,
    };
    let p = Pipeline::new(config);
    let out = |v: serde_json::Value| println!("{v}");
    match cli.command {
        Command::Dataset { action: DatasetAction::Build } => {
            let s = p.dataset_build()?;
            out(serde_json::json!({"dataset": p.stage_dir("dataset"), "records": s.records, "train": s.train, "validation": s.validation, "test": s.test}));
        }
        Command::Augment => {
            let n = p.augment()?;
            out(serde_json::json!({"augmented": n}));
        }
        Command::Train { model_dir } => {
            let (dir, id) = p.train(model_dir.as_deref())?;
            out(serde_json::json!({"model_dir": dir, "model_id": id}));
        }
        Command::Predict { model, images } => {
            let f = p.predict(model.as_deref(), &images)?;
            out(serde_json::json!({"model_id": f.model_id, "predictions": f.predictions}));
        }
        Command::Ensemble { members, mode } => {
            let mode = mode.map(|m| match m {
                Mode::SoftmaxSum => EnsembleMode::SoftmaxSum,
                Mode::EncoderComposite => EnsembleMode::EncoderComposite,
            });
            let m = p.ensemble(&members, mode)?;
            out(serde_json::json!({"composite": p.stage_dir("ensemble").join("composite.csv"), "images": m.image_ids().len()}));
        }
        Command::Evaluate { matrix, truth, k, train_counts } => {
            let r = p.evaluate(matrix.as_deref(), truth.as_deref(), &k, train_counts.as_deref())?;
            out(serde_json::json!({"report": p.stage_dir("evaluate").join("report.json"), "top1_accuracy": r.top1_accuracy, "top3_accuracy": r.top3_accuracy}));
        }
        Command::Report { reports, format, exclude_negative } => {
            let path = p.report(&reports, &format, RenderOptions { exclude_negative })?;
            out(serde_json::json!({"report": path}));
        }
        Command::Serve { models, bind, max_body_bytes } => {
            let dirs = if models.is_empty() { vec![p.model_dir(None)] } else { models };
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::Io { path: Path::new(&bind).to_path_buf(), source: e })?;
            rt.block_on(bombus::serve::serve(&bind, dirs, max_body_bytes))?;
        }
    }
    Ok(())
}
