//! Deterministic federated-learning simulator with mean-field adaptive step sizes.
//!
//! Every global round solves for per-client, per-epoch step sizes at a fixed
//! point of the population's mean gradient and mean parameter paths, then
//! trains and aggregates. FedAvg, FedProx and the server-adaptive
//! FedAdam/FedAdagrad/FedYogi baselines share the same loop.
//!
//! Numeric code is generic over [`Scalar`]; [`F64Params`] and friends name the
//! double-precision instantiation used by the runner.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod federation;
pub mod meanfield;
pub mod model;
mod param;
mod scalar;

pub use error::{DataError, FedError, ModelError, SolverError};
pub use model::{
    finite_diff_gradient, gradient, init_params, loss, loss_and_gradient, predict_one, Batch, ModelKind, ModelSpec,
    RowView, Samples,
};
pub use param::{sgd_step, ParamVector};
pub use scalar::Scalar;

pub type F64Params = ParamVector<f64>;
pub type F32Params = ParamVector<f32>;
pub type F64Dataset = data::Dataset<f64>;
pub type F32Dataset = data::Dataset<f32>;
pub type F64Batch = Batch<f64>;
