//! Experiment configuration files (TOML).
//!
//! Top-level keys set experiment fields; `[dataset]`, `[partition]` and
//! `[model]` tables configure the sub-systems. Only `algorithm` and
//! `[dataset]` are required.

use std::path::{Path, PathBuf};

use fedagg_core::data::Dataset;
use fedagg_core::data::{load_idx, synth_generate};
use fedagg_core::federation::{DatasetConfig, ExperimentConfig};
use fedagg_core::Scalar;

use crate::error::CliError;

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "FEDAGG_DATA_DIR";

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    parse_config_str(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Canonical TOML text of a configuration; parsing it yields the same configuration.
pub fn to_toml_string(config: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string(config).map_err(|e| CliError::Config(e.to_string()))
}

/// MNIST directory: config `dir`, else the environment variable, else `data/mnist`.
pub fn mnist_dir(configured: Option<&Path>) -> PathBuf {
    configured
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Loads or generates the (train, test) pair named by the configuration.
pub fn load_datasets<T: Scalar>(config: &ExperimentConfig) -> Result<(Dataset<T>, Dataset<T>), CliError> {
    match &config.dataset {
        DatasetConfig::Mnist { dir } => {
            let dir = mnist_dir(dir.as_deref());
            let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
            let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
            Ok((train, test))
        }
        DatasetConfig::Synthetic {
            num_classes,
            input_dim,
            samples_per_class,
            test_samples_per_class,
            separation,
            seed,
        } => {
            let train = synth_generate(*num_classes, *input_dim, *samples_per_class, *separation, *seed)?;
            let test = synth_generate(
                *num_classes,
                *input_dim,
                *test_samples_per_class,
                *separation,
                seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
            )?;
            Ok((train, test))
        }
    }
}
