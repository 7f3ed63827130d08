//! Experiment runner for federated training with mean-field step sizes.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod metrics;

pub use error::CliError;
