use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Batch, ModelConfig, ModelError, SensorimotorModel};
use crate::data::{batch_iterator, generate_samples, mix_seed, TrainingSample};
use crate::env::{AgentKind, EnvConfig};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, LossKind};

const INIT_TAG: u64 = 1;
const HELDOUT_TAG: u64 = 2;
const EPOCH_TAG: u64 = 0x1000_0000;
const SHUFFLE_TAG: u64 = 3;
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub horizon: usize,
    pub epochs: usize,
    pub trajectories_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_trajectories: usize,
    /// Evaluate every this many epochs; the final epoch is always evaluated.
    pub eval_every: usize,
    pub inverse_model_enabled: bool,
    pub inverse_loss_weight: f64,
    pub inverse_stop_gradient: bool,
    pub loss: LossKind,
    /// Overrides the per-agent default output activation.
    pub output_activation: Option<Activation>,
    pub adam: AdamConfig,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 6,
            epochs: 200,
            trajectories_per_epoch: 2000,
            batch_size: 100,
            seed: 0,
            eval_trajectories: 10_000,
            eval_every: 1,
            inverse_model_enabled: false,
            inverse_loss_weight: 1.0,
            inverse_stop_gradient: false,
            loss: LossKind::Mse,
            output_activation: None,
            adam: AdamConfig::default(),
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.trajectories_per_epoch {
            return bad(format!(
                "batch_size {} must be in 1..={} (trajectories per epoch)",
                self.batch_size, self.trajectories_per_epoch
            ));
        }
        if self.eval_trajectories == 0 || self.eval_every == 0 {
            return bad("eval_trajectories and eval_every must be positive".into());
        }
        if !(self.inverse_loss_weight >= 0.0 && self.inverse_loss_weight.is_finite()) {
            return bad(format!("inverse_loss_weight must be >= 0, got {}", self.inverse_loss_weight));
        }
        if !(self.adam.learning_rate >= 0.0) {
            return bad("learning rate must be >= 0".into());
        }
        let a = &self.arch;
        if [a.lstm_hidden, a.repr_dim, a.predictor_hidden, a.inverse_hidden].contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Seed of the held-out set a [`Trainer`] draws for this config.
    pub fn heldout_seed(&self) -> u64 {
        mix_seed(self.seed, HELDOUT_TAG)
    }

    pub fn model_config(&self, env: &EnvConfig) -> ModelConfig {
        let mut m = ModelConfig::for_env(env, self.arch).with_loss(self.loss);
        if let Some(a) = self.output_activation {
            m.output_activation = a;
        }
        if self.inverse_model_enabled {
            m = m.with_inverse(self.inverse_loss_weight, self.inverse_stop_gradient);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN on epochs that were not evaluated.
    pub eval_mse: f64,
    pub wall_seconds: f64,
}

/// Mean over samples of the per-sample sensor MSE at the horizon.
pub fn evaluate_mse(model: &SensorimotorModel, samples: &[TrainingSample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let batch = Batch::from_samples(chunk.iter())?;
        let pred = model.predict_batch(&batch.s_t, &batch.commands)?;
        let sq: f64 = pred
            .data()
            .iter()
            .zip(batch.s_next.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        total += sq / batch.s_next.cols() as f64;
    }
    if samples.is_empty() {
        return Err(crate::data::DataError::Empty.into());
    }
    Ok(total / samples.len() as f64)
}

fn mse_against(samples: &[TrainingSample], pred: impl Fn(&TrainingSample) -> Vec<f64>) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let p = pred(s);
            let t = s.s_next.as_slice();
            p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64
        })
        .sum();
    total / samples.len() as f64
}

/// MSE of predicting `s_{t+T} := s_t`.
pub fn identity_baseline_mse(samples: &[TrainingSample]) -> f64 {
    mse_against(samples, |s| s.s_t.0.clone())
}

/// MSE of predicting the mean of `s_{t+T}` over the same set.
pub fn mean_baseline_mse(samples: &[TrainingSample]) -> f64 {
    let dim = samples.first().map_or(0, |s| s.s_next.len());
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.s_next.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
    mse_against(samples, |_| mean.clone())
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Fraction of samples whose predicted node (argmax over the node one-hot
/// block) is the true final node.
pub fn lattice_node_accuracy(
    model: &SensorimotorModel,
    samples: &[TrainingSample],
    lattice_size: usize,
) -> Result<f64, ModelError> {
    let nodes = lattice_size * lattice_size;
    let mut hits = 0usize;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let batch = Batch::from_samples(chunk.iter())?;
        let pred = model.predict_batch(&batch.s_t, &batch.commands)?;
        for i in 0..chunk.len() {
            if argmax(&pred.row(i)[..nodes]) == argmax(&batch.s_next.row(i)[..nodes]) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / samples.len().max(1) as f64)
}

/// Training state: model, optimizer, epoch counter and the fixed held-out
/// set. Each epoch's data and shuffle derive from `(seed, epoch)` only, so a
/// resumed run continues bit-identically.
pub struct Trainer {
    pub env: EnvConfig,
    pub config: TrainConfig,
    pub model: SensorimotorModel,
    pub adam: AdamState,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    heldout: Vec<TrainingSample>,
    fixed_training_set: Option<Vec<TrainingSample>>,
}

impl Trainer {
    pub fn new(env: EnvConfig, config: TrainConfig) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, INIT_TAG));
        config.validate()?;
        let model = SensorimotorModel::new(config.model_config(&env), &mut rng);
        Self::from_parts(env, config, model)
    }

    pub(super) fn from_parts(env: EnvConfig, config: TrainConfig, model: SensorimotorModel) -> Result<Self, ModelError> {
        config.validate()?;
        env.validate()?;
        let heldout = generate_samples(
            &env,
            config.horizon,
            config.eval_trajectories,
            config.heldout_seed(),
        )?;
        let adam = AdamState::new(config.adam, &model);
        Ok(Self {
            env,
            config,
            model,
            adam,
            epoch: 0,
            history: Vec::new(),
            heldout,
            fixed_training_set: None,
        })
    }

    /// Train on `samples` every epoch instead of sampling fresh rollouts.
    pub fn with_training_set(mut self, samples: Vec<TrainingSample>) -> Result<Self, ModelError> {
        if samples.len() < self.config.batch_size {
            return Err(ModelError::Config(format!(
                "training set of {} is smaller than one batch",
                samples.len()
            )));
        }
        self.fixed_training_set = Some(samples);
        Ok(self)
    }

    /// Replace the held-out set, e.g. with one matching a fixed training set.
    pub fn with_heldout(mut self, samples: Vec<TrainingSample>) -> Result<Self, ModelError> {
        if samples.is_empty() {
            return Err(crate::data::DataError::Empty.into());
        }
        self.heldout = samples;
        Ok(self)
    }

    pub fn heldout(&self) -> &[TrainingSample] {
        &self.heldout
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn eval_mse(&self) -> Result<f64, ModelError> {
        evaluate_mse(&self.model, &self.heldout)
    }

    pub fn run_epoch(&mut self) -> Result<EpochMetrics, ModelError> {
        let started = Instant::now();
        let epoch_seed = mix_seed(self.config.seed, EPOCH_TAG + self.epoch as u64);
        let fresh;
        let samples = match &self.fixed_training_set {
            Some(s) => s.as_slice(),
            None => {
                fresh = generate_samples(
                    &self.env,
                    self.config.horizon,
                    self.config.trajectories_per_epoch,
                    epoch_seed,
                )?;
                fresh.as_slice()
            }
        };
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in batch_iterator(samples.len(), self.config.batch_size, mix_seed(epoch_seed, SHUFFLE_TAG))?.enumerate() {
            let batch = Batch::from_samples(idx.iter().map(|&i| &samples[i]))?;
            let out = self.model.training_loss(&batch)?;
            if !out.total.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: b,
                    detail: format!("prediction {} inverse {:?}", out.prediction, out.inverse),
                });
            }
            adam_step(&mut self.model, &out.grads, &mut self.adam)?;
            loss_sum += out.total;
            batches += 1;
        }
        let last = self.epoch + 1 == self.config.epochs;
        let eval_mse = if last || (self.epoch + 1) % self.config.eval_every == 0 {
            self.eval_mse()?
        } else {
            f64::NAN
        };
        let metrics = EpochMetrics {
            epoch: self.epoch,
            train_loss: loss_sum / batches as f64,
            eval_mse,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.history.push(metrics);
        Ok(metrics)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<(), ModelError>
    where
        F: FnMut(&Trainer, &EpochMetrics) -> Result<(), ModelError>,
    {
        while !self.is_finished() {
            let m = self.run_epoch()?;
            on_epoch(self, &m)?;
        }
        Ok(())
    }

    pub fn lattice_accuracy(&self) -> Result<f64, ModelError> {
        if self.env.agent != AgentKind::Lattice {
            return Err(ModelError::Config("node accuracy needs a lattice agent".into()));
        }
        lattice_node_accuracy(&self.model, &self.heldout, self.env.lattice_size)
    }
}

/// Trains from scratch and returns the model with its per-epoch metrics.
pub fn train(env: &EnvConfig, config: &TrainConfig) -> Result<(SensorimotorModel, Vec<EpochMetrics>), ModelError> {
    let mut t = Trainer::new(env.clone(), config.clone())?;
    t.run(|_, _| Ok(()))?;
    Ok((t.model, t.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroundTruthDisplacement;
    use crate::env::{LatticeState, LatticeTurn, MotorCommand, Heading, observe, AgentState};
    use crate::nn::Parameters;

    fn tiny(horizon: usize) -> TrainConfig {
        TrainConfig {
            horizon,
            epochs: 3,
            trajectories_per_epoch: 64,
            batch_size: 16,
            seed: 4,
            eval_trajectories: 50,
            arch: Architecture {
                lstm_hidden: 8,
                repr_dim: 6,
                predictor_hidden: 12,
                predictor_layers: 3,
                inverse_hidden: 8,
                inverse_layers: 2,
                forget_bias: 1.0,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(2);
        c.batch_size = 65;
        assert!(c.validate().is_err());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = tiny(2);
        c.inverse_loss_weight = -1.0;
        assert!(c.validate().is_err());
        assert!(tiny(2).validate().is_ok());
    }

    #[test]
    fn training_is_reproducible() {
        let env = EnvConfig::forward(0.6);
        let (a, ha) = train(&env, &tiny(3)).unwrap();
        let (b, hb) = train(&env, &tiny(3)).unwrap();
        assert_eq!(a.flat(), b.flat());
        assert_eq!(
            ha.iter().map(|m| m.train_loss).collect::<Vec<_>>(),
            hb.iter().map(|m| m.train_loss).collect::<Vec<_>>()
        );
        assert_eq!(ha.len(), 3);
    }

    #[test]
    fn split_run_matches_continuous_run() {
        let env = EnvConfig::lattice();
        let mut cfg = tiny(2);
        cfg.inverse_model_enabled = true;
        let (whole, _) = train(&env, &cfg).unwrap();
        let mut t = Trainer::new(env, cfg).unwrap();
        t.run_epoch().unwrap();
        let bytes = t.checkpoint_bytes().unwrap();
        let mut resumed = Trainer::from_checkpoint_bytes(&bytes.0, &bytes.1).unwrap();
        resumed.run(|_, _| Ok(())).unwrap();
        assert_eq!(resumed.model.flat(), whole.flat());
        assert_eq!(resumed.history.len(), 3);
    }

    #[test]
    fn training_reduces_eval_error() {
        let env = EnvConfig::forward(0.6);
        let mut cfg = tiny(2);
        cfg.epochs = 30;
        cfg.trajectories_per_epoch = 200;
        cfg.batch_size = 20;
        let mut t = Trainer::new(env, cfg).unwrap();
        let before = t.eval_mse().unwrap();
        t.run(|_, _| Ok(())).unwrap();
        assert!(t.eval_mse().unwrap() < before);
    }

    #[test]
    fn baselines() {
        let env = EnvConfig::forward(0.6);
        let ss = generate_samples(&env, 2, 40, 1).unwrap();
        // Copying each target makes the identity predictor exact.
        let copied: Vec<TrainingSample> = ss
            .iter()
            .map(|s| TrainingSample {
                s_next: s.s_t.clone(),
                ..s.clone()
            })
            .collect();
        assert_eq!(identity_baseline_mse(&copied), 0.0);
        assert!(mean_baseline_mse(&ss) > 0.0);
    }

    #[test]
    fn mean_baseline_on_unit_variance_targets() {
        let env = EnvConfig::forward(0.6);
        let template = generate_samples(&env, 1, 1, 0).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ss: Vec<TrainingSample> = (0..20_000)
            .map(|_| TrainingSample {
                s_next: crate::env::SensorVector((0..9).map(|_| standard_normal(&mut rng)).collect()),
                ..template.clone()
            })
            .collect();
        let m = mean_baseline_mse(&ss);
        assert!((m - 1.0).abs() < 0.03, "{m}");
    }

    // Box-Muller.
    fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn perfect_model_scores_zero() {
        // The zero-weight model outputs zeros, so zero targets make it an
        // exact oracle.
        let env = EnvConfig::lattice();
        let m = SensorimotorModel::zeros(tiny(1).model_config(&env));
        let ss: Vec<TrainingSample> = generate_samples(&env, 1, 10, 3)
            .unwrap()
            .into_iter()
            .map(|s| TrainingSample {
                s_next: crate::env::SensorVector(vec![0.0; env.sensor_dim()]),
                ..s
            })
            .collect();
        assert_eq!(evaluate_mse(&m, &ss).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let env = EnvConfig::forward(0.6);
        let mut t = Trainer::new(env.clone(), tiny(2)).unwrap();
        let mut ss = generate_samples(&env, 2, 16, 9).unwrap();
        ss[3].s_next.0[0] = f64::NAN;
        let mut t2 = Trainer::new(env, tiny(2)).unwrap().with_training_set(ss).unwrap();
        assert!(matches!(t2.run_epoch(), Err(ModelError::NonFiniteLoss { epoch: 0, .. })));
        // Parameters untouched by the failed batch ordering are still finite.
        assert!(t2.model.flat().iter().all(|v| v.is_finite()));
        assert!(t.run_epoch().is_ok());
    }

    fn zero_motion_samples(size: usize) -> Vec<TrainingSample> {
        let env = EnvConfig::lattice();
        let mut out = Vec::new();
        for j in 0..size as i32 {
            for i in 0..size as i32 {
                for heading in Heading::ALL {
                    let state = AgentState::Lattice(LatticeState { node: (i, j), heading });
                    let s = observe(&state, &env).unwrap();
                    out.push(TrainingSample {
                        s_t: s.clone(),
                        commands: vec![MotorCommand::Lattice {
                            turn: LatticeTurn::Straight,
                            advance: false,
                        }],
                        s_next: s,
                        truth: GroundTruthDisplacement::default(),
                        start_pose: state.pose(),
                    });
                }
            }
        }
        out
    }

    #[test]
    fn zero_motion_lattice_is_learned_exactly() {
        let env = EnvConfig::lattice();
        let ss = zero_motion_samples(env.lattice_size);
        let cfg = TrainConfig {
            horizon: 1,
            epochs: 100,
            trajectories_per_epoch: ss.len(),
            batch_size: 24,
            eval_every: 100,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(env.clone(), cfg)
            .unwrap()
            .with_training_set(ss.clone())
            .unwrap()
            .with_heldout(ss.clone())
            .unwrap();
        t.run(|_, _| Ok(())).unwrap();
        assert_eq!(lattice_node_accuracy(&t.model, &ss, env.lattice_size).unwrap(), 1.0);
    }
}
