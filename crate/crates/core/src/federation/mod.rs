//! Federated training: configuration, client updates, server updates and the round loop.

mod config;
mod local;
mod run;
mod server;

pub use config::{
    Algorithm, DatasetConfig, ExperimentConfig, LocalSteps, ModelConfig, ModelName, PartitionConfig, SchemeName,
    UpdateRule,
};
pub use local::{local_train_baseline, local_train_fedagg, BaselineOptimizer, Batching};
pub use run::{
    aggregate, build_partition, evaluate, run_experiment, sample_clients, ExperimentAborted, ExperimentOutput,
    RoundRecord,
};
pub use server::{server_adaptive_update, ServerHyper, ServerState, ServerVariant};
