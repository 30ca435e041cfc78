use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use smrep::data::{generate_samples, Dataset, DatasetHeader};
use smrep::env::{AgentKind, EnvConfig, MotorCommand};
use smrep::model::{
    evaluate_mse, identity_baseline_mse, lattice_node_accuracy, mean_baseline_mse, read_meta, sidecar_path, Batch,
    EpochMetrics, ModelConfig, SensorimotorModel, Trainer,
};
use smrep::nn::{grad_check, GradCheckConfig, GradCheckReport};

use crate::artifacts::{prepare_run_dir, sha256_file, write_file, write_json, Provenance, GIT_DESCRIBE};
use crate::config::{EnvSection, RunConfig};
use crate::error::CliError;

pub const TRAIN_SET: &str = "train.smds";
pub const HELDOUT_SET: &str = "heldout.smds";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Serialize)]
struct FileRecord {
    file: String,
    sha256: String,
    count: usize,
    horizon: usize,
    seed: u64,
}

#[derive(Serialize)]
struct DatasetManifest<'a> {
    provenance: Provenance<'a>,
    files: Vec<FileRecord>,
}

pub fn generate(config: &RunConfig) -> Result<(), CliError> {
    let env = config.env_config()?;
    let dir = prepare_run_dir(config)?;
    let horizon = config.train.horizon;
    let mut files = Vec::new();
    for (name, count, seed) in [
        (TRAIN_SET, config.data.train_samples, config.train_set_seed()),
        (HELDOUT_SET, config.train.eval_trajectories, config.train.heldout_seed()),
    ] {
        let ds = Dataset::generate(&env, horizon, count, seed)?;
        let path = dir.join(name);
        ds.save(&path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        let sha256 = sha256_file(&path)?;
        println!("wrote {} ({count} sequences, T = {horizon}, sha256 {sha256})", path.display());
        files.push(FileRecord {
            file: name.to_string(),
            sha256,
            count,
            horizon,
            seed,
        });
    }
    write_json(
        &dir.join("dataset.json"),
        &DatasetManifest {
            provenance: Provenance::new("generate", config),
            files,
        },
    )
}

/// Rejects a checkpoint whose input widths do not fit `env`.
pub fn check_compatible(model: &ModelConfig, env: &EnvConfig) -> Result<(), CliError> {
    let motor = MotorCommand::encoded_dim(env.agent);
    let sensor = env.sensor_dim();
    if model.motor_dim != motor || model.sensor_dim != sensor {
        return Err(CliError::Shape(format!(
            "checkpoint expects motor/sensor widths {}/{}, data has {motor}/{sensor} ({:?} agent)",
            model.motor_dim, model.sensor_dim, env.agent
        )));
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("dataset {} not found; run `smds generate` first", path.display())));
    }
    Dataset::load(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,eval_mse,wall_seconds\n");
    for m in history {
        let eval = if m.eval_mse.is_nan() { String::new() } else { m.eval_mse.to_string() };
        let _ = writeln!(out, "{},{},{},{}", m.epoch, m.train_loss, eval, m.wall_seconds);
    }
    out
}

fn save(trainer: &Trainer, path: &Path) -> Result<(), CliError> {
    trainer
        .save_checkpoint(path)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: bool,
    pub grad_check: bool,
    /// Stop after this many epochs in this invocation (the run can be
    /// resumed later).
    pub stop_after: Option<usize>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    provenance: Provenance<'a>,
    epochs: usize,
    final_eval_mse: f64,
    identity_baseline_mse: f64,
    mean_baseline_mse: f64,
    lattice_node_accuracy: Option<f64>,
    checkpoint: String,
}

/// Trains per `config`, writing checkpoints and `metrics.csv` into the run
/// directory. Returns the final checkpoint path, or `None` when stopped
/// early by `stop_after`.
pub fn train(config: &RunConfig, opts: &TrainOptions) -> Result<Option<PathBuf>, CliError> {
    let env = config.env_config()?;
    let dir = prepare_run_dir(config)?;
    if opts.grad_check {
        let report = run_grad_check(config, &env, &GradCheckArgs::default())?;
        println!("gradient check passed (max relative error {:.2e})", report.max_rel_error);
    }
    let last = dir.join(LAST_CHECKPOINT);
    let mut trainer = if opts.resume {
        if !last.exists() {
            return Err(CliError::Config(format!("no checkpoint to resume at {}", last.display())));
        }
        let t = Trainer::resume(&last)?;
        if t.config != config.train || t.env != env {
            return Err(CliError::Config(format!(
                "{} was written by a different config; refusing to resume",
                last.display()
            )));
        }
        println!("resuming {} at epoch {}", config.name, t.epoch);
        t
    } else {
        Trainer::new(env.clone(), config.train.clone())?
    };
    if !config.data.on_the_fly {
        let ds = load_dataset(&dir.join(TRAIN_SET))?;
        if ds.header.env != env || ds.header.horizon != config.train.horizon {
            return Err(CliError::Config(format!(
                "{} was generated from a different env or horizon",
                dir.join(TRAIN_SET).display()
            )));
        }
        trainer = trainer.with_training_set(ds.samples)?;
    }
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(CliError::io(&ckpt_dir))?;
    let metrics_path = dir.join(METRICS_CSV);
    let epochs = config.train.epochs;
    let mut ran = 0;
    while !trainer.is_finished() {
        if opts.stop_after.is_some_and(|n| ran >= n) {
            save(&trainer, &last)?;
            println!("stopped after {ran} epochs; continue with --resume");
            return Ok(None);
        }
        let m = match trainer.run_epoch() {
            Ok(m) => m,
            Err(e) => {
                if last.exists() {
                    eprintln!("last good checkpoint kept at {}", last.display());
                }
                return Err(e.into());
            }
        };
        ran += 1;
        let eval = if m.eval_mse.is_nan() { "-".to_string() } else { format!("{:.5}", m.eval_mse) };
        println!(
            "epoch {:>5}/{epochs}  train {:.5}  eval {eval}  {:.1}s",
            m.epoch + 1,
            m.train_loss,
            m.wall_seconds
        );
        write_file(&metrics_path, metrics_csv(&trainer.history).as_bytes())?;
        if trainer.epoch % config.data.checkpoint_every == 0 || trainer.is_finished() {
            save(&trainer, &ckpt_dir.join(format!("epoch_{:05}.ckpt", trainer.epoch)))?;
            save(&trainer, &last)?;
        }
    }
    let final_path = dir.join(FINAL_CHECKPOINT);
    save(&trainer, &final_path)?;
    let heldout = trainer.heldout();
    let summary = TrainSummary {
        provenance: Provenance::new("train", config),
        epochs: trainer.epoch,
        final_eval_mse: trainer.history.last().map_or(f64::NAN, |m| m.eval_mse),
        identity_baseline_mse: identity_baseline_mse(heldout),
        mean_baseline_mse: mean_baseline_mse(heldout),
        lattice_node_accuracy: match env.agent {
            AgentKind::Lattice => Some(trainer.lattice_accuracy()?),
            _ => None,
        },
        checkpoint: sha256_file(&final_path)?,
    };
    println!(
        "held-out mse {:.5} (identity {:.5}, mean {:.5}){}",
        summary.final_eval_mse,
        summary.identity_baseline_mse,
        summary.mean_baseline_mse,
        summary
            .lattice_node_accuracy
            .map_or(String::new(), |a| format!(", node accuracy {a:.4}"))
    );
    write_json(&dir.join("train_summary.json"), &summary)?;
    println!("wrote {}", final_path.display());
    Ok(Some(final_path))
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
pub struct EvalReport {
    pub mse: f64,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub env: EnvSection,
    pub identity_baseline_mse: f64,
    pub mean_baseline_mse: f64,
    pub lattice_node_accuracy: Option<f64>,
    checkpoint: Artifact,
    checkpoint_epoch: usize,
    dataset: Artifact,
    dataset_seed: u64,
    git_describe: &'static str,
}

/// Writes `<checkpoint stem>.eval.<dataset stem>.json` next to the checkpoint
/// unless `out` is given.
pub fn eval(checkpoint: &Path, dataset: &Path, out: Option<&Path>) -> Result<EvalReport, CliError> {
    let (model, meta) = load_model(checkpoint)?;
    let ds = load_dataset(dataset)?;
    check_compatible(&model.config, &ds.header.env)?;
    let samples = &ds.samples;
    let report = EvalReport {
        mse: evaluate_mse(&model, samples)?,
        n: samples.len(),
        horizon: ds.header.horizon,
        env: EnvSection::from_env(&ds.header.env),
        identity_baseline_mse: identity_baseline_mse(samples),
        mean_baseline_mse: mean_baseline_mse(samples),
        lattice_node_accuracy: match ds.header.env.agent {
            AgentKind::Lattice => Some(lattice_node_accuracy(&model, samples, ds.header.env.lattice_size)?),
            _ => None,
        },
        checkpoint: Artifact {
            path: checkpoint.display().to_string(),
            sha256: sha256_file(checkpoint)?,
        },
        checkpoint_epoch: meta.epoch,
        dataset: Artifact {
            path: dataset.display().to_string(),
            sha256: sha256_file(dataset)?,
        },
        dataset_seed: ds.header.seed,
        git_describe: GIT_DESCRIBE,
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = |p: &Path| p.file_stem().and_then(|s| s.to_str()).unwrap_or("x").to_string();
        checkpoint.with_file_name(format!("{}.eval.{}.json", stem(checkpoint), stem(dataset)))
    });
    println!(
        "mse {:.6} over {} sequences (T = {}); identity {:.6}, mean {:.6}",
        report.mse, report.n, report.horizon, report.identity_baseline_mse, report.mean_baseline_mse
    );
    if let Some(a) = report.lattice_node_accuracy {
        println!("node accuracy {a:.4}");
    }
    write_json(&out, &report)?;
    println!("wrote {}", out.display());
    Ok(report)
}

pub fn load_model(path: &Path) -> Result<(SensorimotorModel, smrep::model::CheckpointMeta), CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} not found", path.display())));
    }
    SensorimotorModel::load(path).map_err(|e| match CliError::from(e) {
        CliError::Other(m) => CliError::Other(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Serialize)]
struct CheckpointSummary {
    format_version: u32,
    epoch: usize,
    adam_t: u64,
    model: ModelConfig,
    env: EnvSection,
    train: smrep::model::TrainConfig,
    last_epoch: Option<EpochMetrics>,
}

/// Prints the JSON header of a dataset or the metadata of a checkpoint.
pub fn inspect(path: &Path) -> Result<(), CliError> {
    let mut file = std::fs::File::open(path).map_err(CliError::io(path))?;
    let text = match Dataset::read_header(&mut file) {
        Ok(header) => serde_json::to_string_pretty::<DatasetHeader>(&header)?,
        Err(_) if sidecar_path(path).exists() && sidecar_path(path) != path => {
            let meta = read_meta(path)?;
            serde_json::to_string_pretty(&CheckpointSummary {
                format_version: meta.format_version,
                epoch: meta.epoch,
                adam_t: meta.adam_t,
                model: meta.model,
                env: EnvSection::from_env(&meta.env),
                train: meta.train,
                last_epoch: meta.history.last().copied(),
            })?
        }
        Err(e) => {
            return Err(CliError::Other(format!(
                "{} is neither a dataset nor a checkpoint with a sidecar: {e}",
                path.display()
            )))
        }
    };
    println!("{text}");
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckArgs {
    pub samples_per_tensor: usize,
    pub step: f64,
    pub tolerance: f64,
    pub batch: usize,
}

impl Default for GradCheckArgs {
    /// Step 1e-3: with sensor targets of order 10 the loss is large enough
    /// that a 1e-5 step loses about five digits to cancellation.
    fn default() -> Self {
        Self {
            samples_per_tensor: 50,
            step: 1e-3,
            tolerance: 1e-4,
            batch: 4,
        }
    }
}

/// Finite-difference check of the configured model, including the inverse
/// head when enabled. Fails with exit code 7 when any tensor is off.
pub fn run_grad_check(config: &RunConfig, env: &EnvConfig, args: &GradCheckArgs) -> Result<GradCheckReport, CliError> {
    let model = Trainer::new(env.clone(), smrep::model::TrainConfig {
        eval_trajectories: 1,
        ..config.train.clone()
    })?
    .model;
    let samples = generate_samples(env, config.train.horizon, args.batch, config.seed)?;
    let batch = Batch::from_samples(samples.iter())?;
    let grads = model.training_loss(&batch)?.grads;
    let report = grad_check(
        &model,
        &grads,
        |m| m.loss_probe(&batch),
        &GradCheckConfig {
            samples_per_tensor: args.samples_per_tensor,
            step: args.step,
            tolerance: args.tolerance,
            seed: config.seed,
            ..GradCheckConfig::default()
        },
    );
    for t in &report.tensors {
        println!(
            "{:<28} checked {:>3}  kinks skipped {:>3}  max rel error {:.2e}{}",
            t.name,
            t.checked,
            t.skipped_kinks,
            t.max_rel_error,
            if t.passed { "" } else { "  FAIL" }
        );
    }
    if !report.passed {
        return Err(CliError::GradCheck {
            max_rel_error: report.max_rel_error,
            tolerance: args.tolerance,
        });
    }
    Ok(report)
}

pub fn grad_check_command(config: &RunConfig, args: &GradCheckArgs) -> Result<(), CliError> {
    let env = config.env_config()?;
    let dir = prepare_run_dir(config)?;
    let result = run_grad_check(config, &env, args);
    if let Ok(report) = &result {
        #[derive(Serialize)]
        struct Out<'a> {
            provenance: Provenance<'a>,
            step: f64,
            tolerance: f64,
            batch: usize,
            report: &'a GradCheckReport,
        }
        write_json(
            &dir.join("grad_check.json"),
            &Out {
                provenance: Provenance::new("grad-check", config),
                step: args.step,
                tolerance: args.tolerance,
                batch: args.batch,
                report,
            },
        )?;
        println!("gradient check passed (max relative error {:.2e})", report.max_rel_error);
    }
    result.map(|_| ())
}
