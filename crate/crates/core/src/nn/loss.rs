use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use super::NnError;

/// Mean squared error and its gradient `2 (pred - target) / dim`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::Shape(format!(
            "mse of {} predictions against {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Batch mean of per-sample MSE. Rows are samples.
pub fn mse_batch(pred: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "mse of {:?} predictions against {:?} targets",
            pred.shape(),
            target.shape()
        )));
    }
    let (loss, grad) = mse_loss(pred.data(), target.data())?;
    Ok((loss, Tensor2::from_vec(pred.rows(), pred.cols(), grad)?))
}

/// Batch mean binary cross-entropy for probabilities in `(0, 1)`.
pub fn bce_batch(prob: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2), NnError> {
    if prob.shape() != target.shape() || prob.data().is_empty() {
        return Err(NnError::Shape(format!(
            "cross-entropy of {:?} against {:?}",
            prob.shape(),
            target.shape()
        )));
    }
    const CLAMP: f64 = 1e-12;
    let n = prob.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(prob.rows(), prob.cols());
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(prob.data()).zip(target.data()) {
        let p = p.clamp(CLAMP, 1.0 - CLAMP);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        *g = (p - y) / (p * (1.0 - p)) / n;
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn evaluate(self, pred: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2), NnError> {
        match self {
            LossKind::Mse => mse_batch(pred, target),
            LossKind::CrossEntropy => bce_batch(pred, target),
        }
    }
}
