use std::path::PathBuf;

use smrep::analysis::AnalysisError;
use smrep::data::DataError;
use smrep::env::EnvError;
use smrep::model::ModelError;
use smrep::nn::NnError;
use thiserror::Error;

/// Process exit codes. Stable; documented in `smds --help`.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const ENV: u8 = 3;
    pub const NON_FINITE: u8 = 4;
    pub const SHAPE: u8 = 5;
    pub const DEGENERATE: u8 = 6;
    pub const GRAD_CHECK: u8 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("environment: {0}")]
    Env(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate representation: {0}")]
    Degenerate(String),
    #[error("gradient check failed: max relative error {max_rel_error:.3e} (tolerance {tolerance:e})")]
    GradCheck { max_rel_error: f64, tolerance: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::ConfigFile { .. } => exit::CONFIG,
            CliError::Env(_) => exit::ENV,
            CliError::NonFinite(_) => exit::NON_FINITE,
            CliError::Shape(_) => exit::SHAPE,
            CliError::Degenerate(_) => exit::DEGENERATE,
            CliError::GradCheck { .. } => exit::GRAD_CHECK,
            CliError::Io { .. } | CliError::Other(_) => exit::OTHER,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Env(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Shape(m) => CliError::Shape(m),
            NnError::NonFiniteGradient { .. } => CliError::NonFinite(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Rollout { .. } => CliError::Env(e.to_string()),
            DataError::Env(env) => env.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Nn(n) => n.into(),
            ModelError::Data(d) => d.into(),
            ModelError::Env(env) => env.into(),
            ModelError::NonFiniteLoss { .. } => CliError::NonFinite(e.to_string()),
            ModelError::Config(m) => CliError::Config(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Degenerate(m) => CliError::Degenerate(m),
            AnalysisError::Shape(m) => CliError::Shape(m),
            AnalysisError::Model(m) => m.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(format!("json: {e}"))
    }
}
