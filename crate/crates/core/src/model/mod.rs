//! Motor-sequence encoder, sensorimotor predictor and the optional inverse
//! model, trained end-to-end.
//!
//! ```text
//! commands ──LSTM──▶ h_T ──sigmoid dense──▶ h_m ─┐
//!                                               ├─▶ relu MLP ──▶ ŝ_{t+T}
//!                                         s_t ──┘
//! [s_t ; s_{t+T}] ──relu MLP──▶ ĥ_m   (inverse head, optional)
//! ```

mod checkpoint;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TrainingSample};
use crate::env::{EnvConfig, EnvError, MotorCommand};
use crate::nn::{
    mse_batch, prefixed, prefixed_mut, Activation, DenseCache, DenseLayer, LossKind, LstmParams,
    LstmSequenceCache, NnError, ParamView, ParamViewMut, Parameters, Probe, Tensor2,
};

pub use checkpoint::{read_meta, sidecar_path, CheckpointMeta, CHECKPOINT_VERSION};
pub use train::{
    evaluate_mse, identity_baseline_mse, lattice_node_accuracy, mean_baseline_mse, train,
    EpochMetrics, TrainConfig, Trainer,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Layer sizes. Defaults are the canonical experiment network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub lstm_hidden: usize,
    pub repr_dim: usize,
    pub predictor_hidden: usize,
    pub predictor_layers: usize,
    pub inverse_hidden: usize,
    pub inverse_layers: usize,
    pub forget_bias: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            lstm_hidden: 100,
            repr_dim: 50,
            predictor_hidden: 200,
            predictor_layers: 3,
            inverse_hidden: 200,
            inverse_layers: 2,
            forget_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseConfig {
    pub loss_weight: f64,
    /// Block the inverse loss from reaching the encoder.
    pub stop_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub motor_dim: usize,
    pub sensor_dim: usize,
    pub arch: Architecture,
    pub output_activation: Activation,
    pub loss: LossKind,
    pub inverse: Option<InverseConfig>,
}

impl ModelConfig {
    /// Linear outputs for every agent. A sigmoid output under MSE saturates
    /// on one-hot lattice targets: units pushed to 0 early stop learning.
    pub fn for_env(env: &EnvConfig, arch: Architecture) -> Self {
        Self {
            motor_dim: MotorCommand::encoded_dim(env.agent),
            sensor_dim: env.sensor_dim(),
            arch,
            output_activation: Activation::Identity,
            loss: LossKind::Mse,
            inverse: None,
        }
    }

    /// Cross-entropy needs probabilities, so it switches the output to sigmoid.
    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        if loss == LossKind::CrossEntropy {
            self.output_activation = Activation::Sigmoid;
        }
        self
    }

    pub fn with_inverse(mut self, loss_weight: f64, stop_gradient: bool) -> Self {
        self.inverse = Some(InverseConfig {
            loss_weight,
            stop_gradient,
        });
        self
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    fn build(
        input: usize,
        hidden: usize,
        hidden_layers: usize,
        output: usize,
        out_act: Activation,
        mut make: impl FnMut(usize, usize, Activation) -> DenseLayer,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut width = input;
        for _ in 0..hidden_layers {
            layers.push(make(width, hidden, Activation::Relu));
            width = hidden;
        }
        layers.push(make(width, output, out_act));
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Vec<DenseCache>, NnError> {
        let mut caches: Vec<DenseCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = caches.last().map_or(x, |c| &c.output);
            let cache = layer.forward_batch(input)?;
            caches.push(cache);
        }
        Ok(caches)
    }

    pub fn backward(&self, caches: &[DenseCache], grad_out: &Tensor2, grads: &mut Mlp) -> Tensor2 {
        let mut g = grad_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&caches[k], &g, &mut grads.layers[k]);
        }
        g
    }

    fn fold_kinks(&self, caches: &[DenseCache], hash: &mut u64) {
        for (l, c) in self.layers.iter().zip(caches) {
            l.fold_relu_pattern(c, hash);
        }
    }
}

impl Parameters for Mlp {
    fn params(&self) -> Vec<ParamView<'_>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| prefixed(&k.to_string(), l.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(k, l)| prefixed_mut(&k.to_string(), l.params_mut()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub lstm: LstmParams,
    pub repr: DenseLayer,
}

impl Parameters for Encoder {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut v = prefixed("lstm", self.lstm.params());
        v.extend(prefixed("repr", self.repr.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut v = prefixed_mut("lstm", self.lstm.params_mut());
        v.extend(prefixed_mut("repr", self.repr.params_mut()));
        v
    }
}

/// Network inputs for one mini-batch. Built only from sensor readings and
/// commands; ground-truth displacement has no path in.
#[derive(Debug, Clone)]
pub struct Batch {
    /// One `batch x motor_dim` tensor per timestep.
    pub commands: Vec<Tensor2>,
    pub s_t: Tensor2,
    pub s_next: Tensor2,
}

impl Batch {
    pub fn from_samples<'a, I>(samples: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a TrainingSample>,
        I::IntoIter: ExactSizeIterator,
    {
        let samples = samples.into_iter();
        let n = samples.len();
        let mut commands: Vec<Tensor2> = Vec::new();
        let mut s_t = Vec::new();
        let mut s_next = Vec::new();
        let mut sensor_dim = 0;
        for (b, s) in samples.enumerate() {
            if b == 0 {
                let kind = s
                    .commands
                    .first()
                    .ok_or_else(|| NnError::Shape("sample without commands".into()))?
                    .kind();
                let md = MotorCommand::encoded_dim(kind);
                commands = (0..s.horizon()).map(|_| Tensor2::zeros(n, md)).collect();
                sensor_dim = s.s_t.len();
                s_t.reserve(n * sensor_dim);
                s_next.reserve(n * sensor_dim);
            }
            if s.horizon() != commands.len() || s.s_t.len() != sensor_dim || s.s_next.len() != sensor_dim {
                return Err(NnError::Shape(format!("sample {b} does not match the batch layout")).into());
            }
            for (t, c) in s.commands.iter().enumerate() {
                c.encode_into(commands[t].row_mut(b));
            }
            s_t.extend_from_slice(s.s_t.as_slice());
            s_next.extend_from_slice(s.s_next.as_slice());
        }
        if n == 0 {
            return Err(DataError::Empty.into());
        }
        Ok(Self {
            commands,
            s_t: Tensor2::from_vec(n, sensor_dim, s_t)?,
            s_next: Tensor2::from_vec(n, sensor_dim, s_next)?,
        })
    }

    pub fn len(&self) -> usize {
        self.s_t.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything from a forward pass that the backward pass needs.
struct ForwardPass {
    lstm: LstmSequenceCache,
    repr: DenseCache,
    predictor: Vec<DenseCache>,
    inverse: Option<Vec<DenseCache>>,
}

impl ForwardPass {
    fn h_m(&self) -> &Tensor2 {
        &self.repr.output
    }

    fn prediction(&self) -> &Tensor2 {
        &self.predictor.last().expect("predictor has layers").output
    }
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub prediction: f64,
    pub inverse: Option<f64>,
    pub grads: SensorimotorModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorimotorModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub predictor: Mlp,
    pub inverse: Option<Mlp>,
}

impl SensorimotorModel {
    fn build(config: ModelConfig, mut make: impl FnMut(usize, usize, Activation) -> DenseLayer, lstm: LstmParams) -> Self {
        let a = config.arch;
        let repr = make(a.lstm_hidden, a.repr_dim, Activation::Sigmoid);
        let predictor = Mlp::build(
            a.repr_dim + config.sensor_dim,
            a.predictor_hidden,
            a.predictor_layers,
            config.sensor_dim,
            config.output_activation,
            &mut make,
        );
        let inverse = config.inverse.map(|_| {
            Mlp::build(
                2 * config.sensor_dim,
                a.inverse_hidden,
                a.inverse_layers,
                a.repr_dim,
                Activation::Sigmoid,
                &mut make,
            )
        });
        Self {
            config,
            encoder: Encoder { lstm, repr },
            predictor,
            inverse,
        }
    }

    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let lstm = LstmParams::init(config.motor_dim, config.arch.lstm_hidden, config.arch.forget_bias, rng);
        Self::build(config, |i, o, act| DenseLayer::init(i, o, act, rng), lstm)
    }

    /// Same architecture with every parameter zero; also the gradient buffer.
    pub fn zeros(config: ModelConfig) -> Self {
        let lstm = LstmParams::zeros(config.motor_dim, config.arch.lstm_hidden);
        Self::build(config, DenseLayer::zeros, lstm)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone())
    }

    fn check_commands(&self, commands: &[Tensor2]) -> Result<(), ModelError> {
        if commands.is_empty() {
            return Err(NnError::Shape("empty command sequence".into()).into());
        }
        if let Some(c) = commands.iter().find(|c| c.cols() != self.config.motor_dim) {
            return Err(NnError::Shape(format!(
                "command width {} but the encoder expects {}",
                c.cols(),
                self.config.motor_dim
            ))
            .into());
        }
        Ok(())
    }

    /// `h_m` for a batch of command sequences.
    pub fn encode_batch(&self, commands: &[Tensor2]) -> Result<Tensor2, ModelError> {
        self.check_commands(commands)?;
        let (h, _) = self.encoder.lstm.forward_sequence(commands)?;
        Ok(self.encoder.repr.forward_batch(&h)?.output)
    }

    /// `h_m` for one sequence of encoded commands.
    pub fn encode_sequence(&self, commands: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        let steps = commands
            .iter()
            .map(|c| Tensor2::from_vec(1, c.len(), c.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.encode_batch(&steps)?.into_vec())
    }

    pub fn predict_batch(&self, s_t: &Tensor2, commands: &[Tensor2]) -> Result<Tensor2, ModelError> {
        if s_t.cols() != self.config.sensor_dim {
            return Err(NnError::Shape(format!(
                "sensor width {} but the predictor expects {}",
                s_t.cols(),
                self.config.sensor_dim
            ))
            .into());
        }
        let h_m = self.encode_batch(commands)?;
        let caches = self.predictor.forward(&h_m.hcat(s_t)?)?;
        Ok(caches.into_iter().last().expect("predictor has layers").output)
    }

    /// Predicted `s_{t+T}` for one sample.
    pub fn predict(&self, s_t: &[f64], commands: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        let s = Tensor2::from_vec(1, s_t.len(), s_t.to_vec())?;
        let steps = commands
            .iter()
            .map(|c| Tensor2::from_vec(1, c.len(), c.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.predict_batch(&s, &steps)?.into_vec())
    }

    fn forward(&self, batch: &Batch) -> Result<ForwardPass, ModelError> {
        self.check_commands(&batch.commands)?;
        if batch.s_t.cols() != self.config.sensor_dim || batch.s_next.shape() != batch.s_t.shape() {
            return Err(NnError::Shape("batch sensor width does not match the model".into()).into());
        }
        let (h, lstm) = self.encoder.lstm.forward_sequence(&batch.commands)?;
        let repr = self.encoder.repr.forward_batch(&h)?;
        let predictor = self.predictor.forward(&repr.output.hcat(&batch.s_t)?)?;
        let inverse = match &self.inverse {
            Some(inv) => Some(inv.forward(&batch.s_t.hcat(&batch.s_next)?)?),
            None => None,
        };
        Ok(ForwardPass {
            lstm,
            repr,
            predictor,
            inverse,
        })
    }

    /// Weighted loss `wp * L_pred + wi * L_inv` and its exact gradient.
    pub fn loss_terms(&self, batch: &Batch, pred_weight: f64, inv_weight: f64) -> Result<LossBreakdown, ModelError> {
        let pass = self.forward(batch)?;
        let mut grads = self.zeros_like();
        let (prediction, g_pred) = self.config.loss.evaluate(pass.prediction(), &batch.s_next)?;
        let mut total = pred_weight * prediction;
        let mut g_pred = g_pred;
        g_pred.data_mut().iter_mut().for_each(|g| *g *= pred_weight);
        let g_in = self.predictor.backward(&pass.predictor, &g_pred, &mut grads.predictor);
        let repr_dim = self.config.arch.repr_dim;
        let mut dh_m = g_in.columns(0, repr_dim);

        let mut inverse_loss = None;
        if let (Some(inv), Some(caches), Some(icfg)) = (&self.inverse, &pass.inverse, self.config.inverse) {
            let inv_out = &caches.last().expect("inverse has layers").output;
            let (l_inv, mut g_inv) = mse_batch(inv_out, pass.h_m())?;
            total += inv_weight * l_inv;
            inverse_loss = Some(l_inv);
            g_inv.data_mut().iter_mut().for_each(|g| *g *= inv_weight);
            let grads_inv = grads.inverse.as_mut().expect("gradient buffer mirrors the model");
            inv.backward(caches, &g_inv, grads_inv);
            if !icfg.stop_gradient {
                dh_m.axpy(-1.0, &g_inv);
            }
        }

        let dh = self.encoder.repr.backward(&pass.repr, &dh_m, &mut grads.encoder.repr);
        self.encoder.lstm.bptt_backward(&pass.lstm, &dh, &mut grads.encoder.lstm)?;
        Ok(LossBreakdown {
            total,
            prediction,
            inverse: inverse_loss,
            grads,
        })
    }

    /// Prediction loss plus the weighted inverse loss when enabled.
    pub fn training_loss(&self, batch: &Batch) -> Result<LossBreakdown, ModelError> {
        let w = self.config.inverse.map_or(0.0, |c| c.loss_weight);
        self.loss_terms(batch, 1.0, w)
    }

    /// Loss value with a relu-pattern fingerprint, for gradient checking.
    pub fn loss_probe(&self, batch: &Batch) -> Probe {
        let pass = self.forward(batch).expect("probe batch matches the model");
        let (mut loss, _) = self
            .config
            .loss
            .evaluate(pass.prediction(), &batch.s_next)
            .expect("shapes checked");
        let mut hash = 0xcbf2_9ce4_8422_2325;
        self.predictor.fold_kinks(&pass.predictor, &mut hash);
        if let (Some(inv), Some(caches), Some(icfg)) = (&self.inverse, &pass.inverse, self.config.inverse) {
            let out = &caches.last().expect("inverse has layers").output;
            loss += icfg.loss_weight * mse_batch(out, pass.h_m()).expect("shapes checked").0;
            inv.fold_kinks(caches, &mut hash);
        }
        Probe {
            loss,
            kink: Some(hash),
        }
    }
}

impl Parameters for SensorimotorModel {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("predictor", self.predictor.params()));
        if let Some(inv) = &self.inverse {
            v.extend(prefixed("inverse", inv.params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut v = prefixed_mut("encoder", self.encoder.params_mut());
        v.extend(prefixed_mut("predictor", self.predictor.params_mut()));
        if let Some(inv) = &mut self.inverse {
            v.extend(prefixed_mut("inverse", inv.params_mut()));
        }
        v
    }
}
