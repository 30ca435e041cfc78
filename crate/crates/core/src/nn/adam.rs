use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the whole gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: Parameters>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .params()
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` from `grads`.
///
/// Gradients are validated before anything is modified, so a non-finite
/// gradient leaves both the parameters and the state untouched.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<(), NnError> {
    let gviews = grads.params();
    for g in &gviews {
        if let Some(k) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                name: g.name.clone(),
                index: k,
            });
        }
    }
    let cfg = state.config;
    let scale = match cfg.clip_norm {
        Some(max) => {
            let norm = grads.global_norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let pviews = params.params_mut();
    if pviews.len() != gviews.len() || pviews.len() != state.m.len() {
        return Err(NnError::Shape("optimizer state does not match parameters".into()));
    }
    for (((p, g), m), v) in pviews
        .into_iter()
        .zip(&gviews)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.data.len() != g.data.len() || m.len() != p.data.len() {
            return Err(NnError::Shape(format!("gradient shape mismatch for {}", p.name)));
        }
        for k in 0..p.data.len() {
            let gk = g.data[k] * scale;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p.data[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
