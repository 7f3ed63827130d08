//! Runner errors and their process exit codes.

use fedagg_core::{DataError, FedError, ModelError, SolverError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("run directory {0} already exists")]
    Collision(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 1 verification failure, 2 config, 3 non-convergence, 4 divergence, 5 IO, 6 run-id collision.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Verification(_) => 1,
            Self::Config(_) => 2,
            Self::NonConvergence(_) => 3,
            Self::Divergence(_) => 4,
            Self::Io(_) => 5,
            Self::Collision(_) => 6,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        Self::Io(format!("{context}: {e}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => Self::Config(e.to_string()),
            _ => Self::Io(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => Self::Divergence(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NonConvergence(_) => Self::NonConvergence(e.to_string()),
            SolverError::NonFinite { .. } => Self::Divergence(e.to_string()),
            SolverError::Model(m) => m.into(),
            SolverError::Invalid(_) => Self::Config(e.to_string()),
        }
    }
}

impl From<FedError> for CliError {
    fn from(e: FedError) -> Self {
        match e {
            FedError::Config(_) => Self::Config(e.to_string()),
            FedError::Divergence(_) => Self::Divergence(e.to_string()),
            FedError::Solver(s) => s.into(),
            FedError::Model(m) => m.into(),
            FedError::Data(d) => d.into(),
        }
    }
}
