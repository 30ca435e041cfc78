//! Held-out MSE over the θ_body_max grid for both continuous agents.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use smrep::data::generate_samples;
use smrep::env::AgentKind;
use smrep::model::evaluate_mse;

use crate::artifacts::{write_file, write_json, GIT_DESCRIBE};
use crate::commands::{load_model, train, TrainOptions, FINAL_CHECKPOINT};
use crate::config::RunConfig;
use crate::error::CliError;

/// Numerators of the grid `k·π/10`.
pub const THETA_GRID: [u32; 6] = [2, 4, 6, 8, 10, 12];
pub const AGENTS: [&str; 2] = ["forward", "holonomic"];

/// Reference full-scale MSEs for the grid above, shown beside ours.
const REFERENCE_FORWARD: [f64; 6] = [2.32, 2.41, 2.34, 2.33, 2.35, 2.32];
const REFERENCE_HOLONOMIC: [f64; 6] = [1.54, 2.21, 2.30, 2.32, 2.63, 2.67];

/// Full-scale budget: 5000 epochs of 2000 trajectories, batches of 100,
/// evaluated on 10^5 held-out sequences.
pub fn apply_full_scale(cfg: &mut RunConfig) {
    cfg.train.epochs = 5000;
    cfg.train.trajectories_per_epoch = 2000;
    cfg.train.batch_size = 100;
    cfg.train.eval_trajectories = 100_000;
    cfg.train.eval_every = 100;
    cfg.data.checkpoint_every = 100;
    cfg.name.push_str("_full");
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub theta: String,
    pub theta_body_max: f64,
    pub forward_mse: f64,
    pub holonomic_mse: f64,
    pub forward_reference: f64,
    pub holonomic_reference: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub runs_dir: PathBuf,
    pub full_scale: bool,
    /// Reuse `model.ckpt` from an earlier run instead of retraining.
    pub reuse: bool,
    pub out_dir: Option<PathBuf>,
}

fn run_one(path: &Path, agent: &str, opts: &SweepOptions) -> Result<(RunConfig, f64), CliError> {
    let mut cfg = RunConfig::load(path)?;
    if agent_name(cfg.env.agent) != agent {
        return Err(CliError::ConfigFile {
            path: path.to_path_buf(),
            message: format!("expected a {agent} agent"),
        });
    }
    if opts.full_scale {
        apply_full_scale(&mut cfg);
    }
    if let Some(out) = &opts.out_dir {
        cfg.paths.out_dir = out.clone();
    }
    let ckpt = cfg.run_dir().join(FINAL_CHECKPOINT);
    if !(opts.reuse && ckpt.exists()) {
        println!("== training {} ({} epochs)", cfg.name, cfg.train.epochs);
        train(&cfg, &TrainOptions::default())?;
    } else {
        println!("== reusing {}", ckpt.display());
    }
    let (model, _) = load_model(&ckpt)?;
    let env = cfg.env_config()?;
    let heldout = generate_samples(&env, cfg.train.horizon, cfg.train.eval_trajectories, cfg.train.heldout_seed())?;
    Ok((cfg, evaluate_mse(&model, &heldout)?))
}

/// Trains (or reuses) `<agent>_<kk>.toml` from `runs_dir` for every agent
/// and grid angle, then writes `mse_by_theta.csv` and `mse_by_theta.json`.
pub fn eval_sweep(opts: &SweepOptions) -> Result<Vec<SweepRow>, CliError> {
    let mut mse = [[f64::NAN; 6]; 2];
    let mut configs = Vec::new();
    for (a, agent) in AGENTS.iter().enumerate() {
        for (i, k) in THETA_GRID.iter().enumerate() {
            let path = opts.runs_dir.join(format!("{agent}_{k:02}.toml"));
            let (cfg, m) = run_one(&path, agent, opts)?;
            mse[a][i] = m;
            configs.push(cfg);
        }
    }
    let rows: Vec<SweepRow> = THETA_GRID
        .iter()
        .enumerate()
        .map(|(i, k)| SweepRow {
            theta: format!("{k}pi/10"),
            theta_body_max: *k as f64 * std::f64::consts::PI / 10.0,
            forward_mse: mse[0][i],
            holonomic_mse: mse[1][i],
            forward_reference: REFERENCE_FORWARD[i],
            holonomic_reference: REFERENCE_HOLONOMIC[i],
        })
        .collect();
    let base = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let dir = base.join(if opts.full_scale { "sweep_full" } else { "sweep" });
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let mut csv = String::from("theta,theta_body_max,forward_mse,holonomic_mse,forward_reference,holonomic_reference\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.theta, r.theta_body_max, r.forward_mse, r.holonomic_mse, r.forward_reference, r.holonomic_reference
        );
    }
    write_file(&dir.join("mse_by_theta.csv"), csv.as_bytes())?;
    #[derive(Serialize)]
    struct Out<'a> {
        git_describe: &'static str,
        full_scale: bool,
        rows: &'a [SweepRow],
        configs: &'a [RunConfig],
    }
    write_json(
        &dir.join("mse_by_theta.json"),
        &Out {
            git_describe: GIT_DESCRIBE,
            full_scale: opts.full_scale,
            rows: &rows,
            configs: &configs,
        },
    )?;
    println!("{:<10} {:>12} {:>12}   (reference: forward / holonomic)", "theta", "forward", "holonomic");
    for r in &rows {
        println!(
            "{:<10} {:>12.4} {:>12.4}   ({:.2} / {:.2})",
            r.theta, r.forward_mse, r.holonomic_mse, r.forward_reference, r.holonomic_reference
        );
    }
    println!("wrote {}", dir.join("mse_by_theta.csv").display());
    Ok(rows)
}

fn agent_name(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Lattice => "lattice",
        AgentKind::Forward => "forward",
        AgentKind::Holonomic => "holonomic",
    }
}
