//! Model and trainer checkpoints: a tensor file plus a JSON sidecar holding
//! the configs needed to rebuild the model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{EpochMetrics, TrainConfig, Trainer};
use super::{ModelConfig, ModelError, SensorimotorModel};
use crate::env::EnvConfig;
use crate::nn::checkpoint::{load_into, read_tensors, write_tensors, NamedTensor};
use crate::nn::{NnError, ParamView, Parameters};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub adam_t: u64,
    pub history: Vec<EpochMetrics>,
}

/// `model.bin` -> `model.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn adam_views<'a>(names: &[ParamView<'_>], buffers: &'a [Vec<f64>], prefix: &str) -> Vec<ParamView<'a>> {
    names
        .iter()
        .zip(buffers)
        .map(|(p, b)| ParamView {
            name: format!("{prefix}{}", p.name),
            shape: p.shape,
            data: b,
        })
        .collect()
}

fn load_adam(tensors: &[NamedTensor], model: &SensorimotorModel, prefix: &str) -> Result<Vec<Vec<f64>>, NnError> {
    model
        .params()
        .iter()
        .map(|p| {
            let full = format!("{prefix}{}", p.name);
            let t = tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {full}")))?;
            if t.shape != p.shape {
                return Err(NnError::Shape(format!("tensor {full}: {:?} vs {:?}", t.shape, p.shape)));
            }
            Ok(t.data.clone())
        })
        .collect()
}

impl SensorimotorModel {
    /// Rebuilds a model from a checkpoint's tensors and config.
    pub fn from_tensors(config: ModelConfig, tensors: &[NamedTensor]) -> Result<Self, ModelError> {
        let mut m = Self::zeros(config);
        load_into(&mut m, tensors, "model.")?;
        Ok(m)
    }

    /// Reads the model half of a trainer checkpoint.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta), ModelError> {
        let meta = read_meta(path)?;
        let tensors = read_tensors(&mut std::io::BufReader::new(std::fs::File::open(path)?))?;
        Ok((Self::from_tensors(meta.model.clone(), &tensors)?, meta))
    }
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta, ModelError> {
    let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported sidecar version {}", meta.format_version)).into());
    }
    Ok(meta)
}

impl Trainer {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            model: self.model.config.clone(),
            env: self.env.clone(),
            train: self.config.clone(),
            epoch: self.epoch,
            adam_t: self.adam.t,
            history: self.history.clone(),
        }
    }

    /// Tensor bytes and sidecar JSON bytes.
    pub fn checkpoint_bytes(&self) -> Result<(Vec<u8>, Vec<u8>), ModelError> {
        let params = self.model.params();
        let mut views: Vec<ParamView<'_>> = params
            .iter()
            .map(|p| ParamView {
                name: format!("model.{}", p.name),
                shape: p.shape,
                data: p.data,
            })
            .collect();
        views.extend(adam_views(&params, &self.adam.m, "adam.m."));
        views.extend(adam_views(&params, &self.adam.v, "adam.v."));
        let mut bin = Vec::new();
        write_tensors(&mut bin, &views)?;
        let json = serde_json::to_vec_pretty(&self.meta())?;
        Ok((bin, json))
    }

    pub fn from_checkpoint_bytes(bin: &[u8], json: &[u8]) -> Result<Self, ModelError> {
        let meta: CheckpointMeta = serde_json::from_slice(json)?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported sidecar version {}", meta.format_version)).into());
        }
        let tensors = read_tensors(&mut &bin[..])?;
        let model = SensorimotorModel::from_tensors(meta.model.clone(), &tensors)?;
        let m = load_adam(&tensors, &model, "adam.m.")?;
        let v = load_adam(&tensors, &model, "adam.v.")?;
        let mut t = Trainer::from_parts(meta.env, meta.train, model)?;
        t.adam.m = m;
        t.adam.v = v;
        t.adam.t = meta.adam_t;
        t.epoch = meta.epoch;
        t.history = meta.history;
        Ok(t)
    }

    /// Writes `path` and its `.json` sidecar.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let (bin, json) = self.checkpoint_bytes()?;
        std::fs::write(path, bin)?;
        std::fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    pub fn resume(path: &Path) -> Result<Self, ModelError> {
        let bin = std::fs::read(path)?;
        let json = std::fs::read(sidecar_path(path))?;
        Self::from_checkpoint_bytes(&bin, &json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn small() -> TrainConfig {
        TrainConfig {
            horizon: 2,
            epochs: 2,
            trajectories_per_epoch: 32,
            batch_size: 16,
            eval_trajectories: 20,
            inverse_model_enabled: true,
            arch: Architecture {
                lstm_hidden: 5,
                repr_dim: 4,
                predictor_hidden: 6,
                predictor_layers: 3,
                inverse_hidden: 5,
                inverse_layers: 2,
                forget_bias: 1.0,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("smrep-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        let mut t = Trainer::new(EnvConfig::forward(0.5), small()).unwrap();
        t.run_epoch().unwrap();
        t.save_checkpoint(&path).unwrap();
        let (m, meta) = SensorimotorModel::load(&path).unwrap();
        assert_eq!(m, t.model);
        assert_eq!(meta.epoch, 1);
        let r = Trainer::resume(&path).unwrap();
        assert_eq!(r.adam, t.adam);
        assert_eq!(r.history, t.history);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn architecture_mismatch_is_shape_error() {
        let t = Trainer::new(EnvConfig::forward(0.5), small()).unwrap();
        let (bin, _) = t.checkpoint_bytes().unwrap();
        let tensors = read_tensors(&mut &bin[..]).unwrap();
        let mut cfg = t.model.config.clone();
        cfg.arch.lstm_hidden = 7;
        assert!(matches!(
            SensorimotorModel::from_tensors(cfg, &tensors),
            Err(ModelError::Nn(NnError::Shape(_)))
        ));
    }
}
