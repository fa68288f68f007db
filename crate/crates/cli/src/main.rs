//! Operator entry point: dataset generation, pre-training, forecaster
//! training, evaluation, inspection, and hyper-parameter sweeps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use commands::{EvaluateFlags, InspectFlags, SweepAxis, SweepFlags, TrainFlags};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(
    name = "step",
    about = "Pre-training enhanced spatiotemporal forecasting, desk scale",
    version
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    R,
    K,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset plus its planted dependency graph.
    Generate,
    /// Pre-train the masked autoencoder and save its checkpoint.
    Pretrain,
    /// Train the forecasting stage against a pre-trained checkpoint.
    Train {
        /// Pre-trained encoder checkpoint (tsformer.ckpt).
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Reuse a saved representation bank instead of recomputing it.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Also save the representation bank into the run directory.
        #[arg(long, default_value_t = false)]
        save_bank: bool,
    },
    /// Evaluate a trained forecaster on the test range.
    Evaluate {
        /// Forecaster checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pre-trained encoder checkpoint (needed when fusion/GSL are on).
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Emit similarity matrices, retrievals, and reconstruction overlays.
    Inspect {
        /// Pre-trained encoder checkpoint.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Node to inspect.
        #[arg(long, default_value_t = 0)]
        node: usize,
        /// Window start step (defaults to the last full window).
        #[arg(long)]
        window: Option<usize>,
        /// Patches to retrieve per probe.
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// Seed for the overlay's mask.
        #[arg(long, default_value_t = 7)]
        mask_seed: u64,
    },
    /// Sweep the masking ratio r or the kNN k and tabulate metrics.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values for the chosen axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing --config <run-config.json>".into()))?;
    let mut cfg = RunConfig::load(path).map_err(|e| CliError::Usage(format!("{e:#}")))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate => commands::cmd_generate(&cfg)?,
        Command::Pretrain => commands::cmd_pretrain(&cfg)?,
        Command::Train {
            pretrained,
            bank,
            save_bank,
        } => commands::cmd_train(
            &cfg,
            &TrainFlags {
                pretrained: pretrained.clone(),
                bank: bank.clone(),
                save_bank: *save_bank,
            },
        )?,
        Command::Evaluate {
            checkpoint,
            pretrained,
        } => commands::cmd_evaluate(
            &cfg,
            &EvaluateFlags {
                checkpoint: checkpoint.clone(),
                pretrained: pretrained.clone(),
            },
        )?,
        Command::Inspect {
            pretrained,
            node,
            window,
            top_k,
            mask_seed,
        } => commands::cmd_inspect(
            &cfg,
            &InspectFlags {
                pretrained: pretrained.clone(),
                node: *node,
                window_start: *window,
                top_k: *top_k,
                mask_seed: *mask_seed,
            },
        )?,
        Command::Sweep { axis, values } => commands::cmd_sweep(
            &cfg,
            &SweepFlags {
                axis: match axis {
                    Axis::R => SweepAxis::MaskRatio,
                    Axis::K => SweepAxis::K,
                },
                values: values.clone(),
            },
        )?,
    };
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
