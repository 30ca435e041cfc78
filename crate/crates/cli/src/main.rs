//! `smds`: generate datasets, train, evaluate and analyse sensorimotor
//! representation models from TOML run configs.

mod analyze;
mod artifacts;
mod commands;
mod config;
mod error;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{GradCheckArgs, TrainOptions};
use crate::config::RunConfig;
use crate::error::{exit, CliError};
use crate::sweep::SweepOptions;

const AFTER_HELP: &str = "\
Outputs go to <paths.out_dir>/<name>/ (default out/<config file stem>/), next to
config.resolved.toml, the fully defaulted config with the seed and git describe.

Environment:
  SMDS_SEED   overrides the config seed
  RUST_LOG    log filter (default: warn)

Exit codes:
  0  success
  1  I/O or other failure
  2  config error (bad value, missing config, world or dataset file)
  3  environment error (agent stuck, invalid geometry)
  4  non-finite loss (the last good checkpoint is kept)
  5  shape mismatch between checkpoint and data
  6  degenerate representation (constant h_m or too few directions)
  7  gradient check failed";

#[derive(Parser)]
#[command(name = "smds", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("SMDS_GIT_DESCRIBE"), ")"))]
#[command(about = "Sensorimotor prediction experiments: simulate, train, evaluate, analyse")]
#[command(after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads for rollout generation (1 = fully sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write train.smds and heldout.smds for a config, plus a SHA-256 manifest.
    Generate(ConfigArg),
    /// Train a model; writes checkpoints, metrics.csv and model.ckpt.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Continue from <run dir>/last.ckpt.
        #[arg(long)]
        resume: bool,
        /// Run the gradient check first and abort if it fails.
        #[arg(long)]
        grad_check: bool,
        /// Stop after this many epochs; continue later with --resume.
        #[arg(long, value_name = "EPOCHS")]
        stop_after: Option<usize>,
    },
    /// Held-out MSE of a checkpoint on a dataset, written as JSON.
    Eval {
        /// Checkpoint; defaults to <run dir>/model.ckpt when --config is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset; defaults to <run dir>/heldout.smds when --config is given.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Report path; defaults to a file next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate forward_XX / holonomic_XX configs over the
    /// θ_body_max grid {2..12}π/10 and write a table with one row per angle.
    EvalSweep {
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Use the full budget (5000 epochs × 2000 trajectories, 10^5
        /// held-out sequences). Takes days on one core.
        #[arg(long)]
        full_scale: bool,
        /// Reuse an existing model.ckpt instead of retraining.
        #[arg(long)]
        reuse: bool,
        /// Override paths.out_dir of every config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// PCA/ICA projections coloured by displacement, plus topology metrics.
    Analyze {
        #[command(flatten)]
        config: ConfigArg,
        /// Defaults to <run dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Encode this dataset instead of sampling analysis.samples fresh
        /// sequences.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Print the JSON header of a .smds dataset or a checkpoint's metadata.
    Inspect {
        path: PathBuf,
    },
    /// Central finite-difference check of the configured model.
    GradCheck {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = GradCheckArgs::default().samples_per_tensor)]
        samples: usize,
        #[arg(long, default_value_t = GradCheckArgs::default().step)]
        step: f64,
        #[arg(long, default_value_t = GradCheckArgs::default().tolerance)]
        tolerance: f64,
        #[arg(long, default_value_t = GradCheckArgs::default().batch)]
        batch: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate(c) => commands::generate(&RunConfig::load(&c.config)?),
        Command::Train {
            config,
            resume,
            grad_check,
            stop_after,
        } => {
            let opts = TrainOptions {
                resume,
                grad_check,
                stop_after,
            };
            commands::train(&RunConfig::load(&config.config)?, &opts).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            dataset,
            config,
            out,
        } => {
            let run_dir = match &config {
                Some(p) => Some(RunConfig::load(p)?.run_dir()),
                None => None,
            };
            let pick = |given: Option<PathBuf>, file: &str, flag: &str| {
                given
                    .or_else(|| run_dir.as_ref().map(|d| d.join(file)))
                    .ok_or_else(|| CliError::Config(format!("{flag} is required without --config")))
            };
            let checkpoint = pick(checkpoint, commands::FINAL_CHECKPOINT, "--checkpoint")?;
            let dataset = pick(dataset, commands::HELDOUT_SET, "--dataset")?;
            commands::eval(&checkpoint, &dataset, out.as_deref()).map(|_| ())
        }
        Command::EvalSweep {
            runs_dir,
            full_scale,
            reuse,
            out_dir,
        } => sweep::eval_sweep(&SweepOptions {
            runs_dir,
            full_scale,
            reuse,
            out_dir,
        })
        .map(|_| ()),
        Command::Analyze {
            config,
            checkpoint,
            dataset,
        } => analyze::analyze(&RunConfig::load(&config.config)?, checkpoint.as_deref(), dataset.as_deref()).map(|_| ()),
        Command::Inspect { path } => commands::inspect(&path),
        Command::GradCheck {
            config,
            samples,
            step,
            tolerance,
            batch,
        } => commands::grad_check_command(
            &RunConfig::load(&config.config)?,
            &GradCheckArgs {
                samples_per_tensor: samples,
                step,
                tolerance,
                batch,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
