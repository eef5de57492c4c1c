//! `fgsa` — command-line workbench: synthetic data generation, adapter
//! training over a frozen backbone, evaluation, gradient checking, feature
//! dumps and ablation sweeps.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime error.

use clap::{Args, Parser, Subcommand};
use fgsa_core::config::{DataSource, RunConfig};
use fgsa_core::data::{self, ShapeKind, SynthConfig};
use fgsa_core::error::Error;
use fgsa_core::run::{
    cmd_dump, cmd_eval, cmd_sweep, cmd_train, eval_dirs, gradcheck_suite, sweep_csv, Split,
    SweepValue, GRADCHECK_TOLERANCE,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fgsa", about = "Frequency-guided spatial adaptation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration file (key = value with [section] headers).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic camouflage dataset (train/ and test/ splits).
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Training sample count.
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Test sample count (defaults to half the training count).
        #[arg(long)]
        n_test: Option<usize>,
        /// Square sample extent (multiple of 32).
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Permitted foreground/background mean gap in [0, 0.2].
        #[arg(long, default_value_t = 0.0)]
        contrast: f64,
        /// Foreground shape family: ellipse | blob | polygon.
        #[arg(long, default_value = "blob")]
        shape: String,
    },
    /// Train adapter and head against the frozen backbone.
    Train {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Evaluate a checkpoint on a split, or score saved masks directly.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Score the ground truth against itself (pipeline sanity bound).
        #[arg(long, default_value_t = false)]
        oracle: bool,
        /// Directory of prediction masks (enables direct-scoring mode).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Directory of ground-truth masks (direct-scoring mode).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the analytic-vs-finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Write attention maps, prediction and pyramid energy maps for a sample.
    Dump {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train/evaluate across ring widths `d` or `KxM` groupings; emit CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Swept parameter: `d` or `km`.
        #[arg(long)]
        param: String,
        /// Comma-separated values: `1,2,4` for d; `2x4,4x2` for km.
        #[arg(long)]
        values: String,
        /// CSV output path (defaults to stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            e.print().ok();
            std::process::exit(if is_help { 0 } else { 1 });
        }
    };
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(match e {
                Error::Config(_) | Error::InvalidArgument { .. } | Error::ShapeMismatch { .. } => 1,
                _ => 2,
            });
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig, Error> {
    match &arg.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            config,
            out,
            n,
            n_test,
            size,
            seed,
            contrast,
            shape,
        } => {
            // config may carry synth defaults; flags take precedence
            let base = load_config(&config)?;
            let mut synth = match base.data {
                DataSource::Synth(s) => s,
                DataSource::Root(_) => SynthConfig::default(),
            };
            synth.n_train = n;
            synth.n_test = n_test.unwrap_or(n / 2);
            synth.size = size;
            synth.seed = seed;
            synth.contrast_delta = contrast;
            synth.shape = shape.parse::<ShapeKind>()?;
            synth.validate()?;

            let samples = data::generate(&synth)?;
            let (train, test): (Vec<_>, Vec<_>) = samples
                .into_iter()
                .partition(|s| s.id.starts_with("train_"));
            data::save_split(&train, &out.join("train"))?;
            data::save_split(&test, &out.join("test"))?;
            println!(
                "wrote {} train and {} test samples under {}",
                train.len(),
                test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let mut lines = Vec::new();
            let report = cmd_train(&cfg, |line| {
                println!("{line}");
                lines.push(line.to_string());
            })?;
            std::fs::write(cfg.out_dir.join("train.log"), lines.join("\n") + "\n")?;
            println!(
                "checkpoint: {}  (backbone digest unchanged: {})",
                report.checkpoint.display(),
                report.backbone_digest_before == report.backbone_digest_after
            );
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            split,
            oracle,
            pred,
            gt,
            report,
        } => {
            let metrics = match (pred, gt) {
                (Some(pred_dir), Some(gt_dir)) => eval_dirs(&pred_dir, &gt_dir)?,
                (None, None) => {
                    let cfg = load_config(&config)?;
                    let split = split.parse::<Split>()?;
                    cmd_eval(&cfg, checkpoint.as_deref(), split, oracle)?.report
                }
                _ => {
                    return Err(Error::Config(
                        "direct scoring needs both --pred and --gt".into(),
                    ))
                }
            };
            let json = serde_json::to_string_pretty(&metrics).map_err(Error::from)?;
            println!("{json}");
            if let Some(path) = report {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(path, json)?;
            }
            Ok(())
        }
        Command::Gradcheck { config: _, seeds } => {
            let entries = gradcheck_suite(seeds)?;
            let mut failed = false;
            println!("{:<24} {:>14}  status", "op", "max rel error");
            for e in &entries {
                let ok = e.max_rel_error < GRADCHECK_TOLERANCE;
                failed |= !ok;
                println!(
                    "{:<24} {:>14.3e}  {}",
                    e.name,
                    e.max_rel_error,
                    if ok { "pass" } else { "FAIL" }
                );
            }
            if failed {
                return Err(Error::InvalidArgument {
                    op: "gradcheck",
                    detail: format!("at least one op exceeded {GRADCHECK_TOLERANCE:.0e}"),
                });
            }
            Ok(())
        }
        Command::Dump {
            config,
            checkpoint,
            split,
            index,
            out,
        } => {
            let cfg = load_config(&config)?;
            let split = split.parse::<Split>()?;
            let out_dir = out.unwrap_or_else(|| cfg.out_dir.join("dumps"));
            let files = cmd_dump(&cfg, checkpoint.as_deref(), split, index, &out_dir)?;
            for f in &files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = load_config(&config)?;
            let parsed = parse_sweep_values(&param, &values)?;
            let rows = cmd_sweep(&cfg, &parsed, |line| println!("{line}"))?;
            let csv = sweep_csv(&rows);
            print!("{csv}");
            if let Some(path) = out {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(path, csv)?;
            }
            Ok(())
        }
    }
}

fn parse_sweep_values(param: &str, values: &str) -> Result<Vec<SweepValue>, Error> {
    let items: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::Config("no sweep values given".into()));
    }
    match param {
        "d" => items
            .iter()
            .map(|v| {
                v.parse::<usize>()
                    .map(SweepValue::RingWidth)
                    .map_err(|_| Error::Config(format!("bad ring width `{v}`")))
            })
            .collect(),
        "km" => items
            .iter()
            .map(|v| {
                let (k, m) = v
                    .split_once('x')
                    .ok_or_else(|| Error::Config(format!("expected KxM, got `{v}`")))?;
                Ok(SweepValue::Grouping {
                    layers_per_group: k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad K in `{v}`")))?,
                    groups: m
                        .parse()
                        .map_err(|_| Error::Config(format!("bad M in `{v}`")))?,
                })
            })
            .collect(),
        other => Err(Error::Config(format!(
            "unknown sweep parameter `{other}` (expected `d` or `km`)"
        ))),
    }
}
