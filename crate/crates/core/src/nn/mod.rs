//! Minimal neural-network core: dense layers, an LSTM cell with BPTT, losses,
//! Adam and finite-difference gradient checking. Everything runs in `f64`.

mod adam;
pub mod checkpoint;
mod dense;
mod gradcheck;
mod loss;
mod lstm;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{sigmoid, Activation, DenseCache, DenseLayer};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, Probe, TensorCheck};
pub use loss::{bce_batch, mse_batch, mse_loss, LossKind};
pub use lstm::{Gate, LstmParams, LstmSequenceCache, LstmStepCache};
pub use params::{ParamView, ParamViewMut, Parameters};
pub(crate) use params::{prefixed, prefixed_mut};
pub use tensor::{gemm, matmul, Tensor2};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward pass called without a forward cache")]
    MissingCache,
    #[error("non-finite gradient in {name} at index {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
