//! Error types for each subsystem.

use thiserror::Error;

use crate::meanfield::SolverReport;

/// Failures of model evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid model spec: {0}")]
    Spec(String),
}

/// Failures of dataset ingestion and partitioning.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX format in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("inconsistent dataset: {0}")]
    Consistency(String),
    #[error("invalid partition configuration: {0}")]
    Config(String),
}

/// Failures of the mean-field fixed-point solver.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error("no fixed point after {} sweeps (residuals {:.3e}, {:.3e})", .0.sweeps, .0.residual_phi1, .0.residual_phi2)]
    NonConvergence(Box<SolverReport>),
    #[error("non-finite trajectory for client {client} at epoch {epoch}")]
    NonFinite { client: usize, epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Failures of the federated training loop.
#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<ModelError> for FedError {
    /// Non-finite values reached during training count as divergence.
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => Self::Divergence(e.to_string()),
            other => Self::Model(other),
        }
    }
}
