//! Run manifests and run identifiers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// SHA-256 of `config` as hex.
    pub config_hash: String,
    /// Canonical TOML text of the effective configuration.
    pub config: String,
    pub code_version: String,
    pub seed: u64,
    pub start_time: String,
    pub end_time: Option<String>,
    pub status: RunStatus,
}

pub fn config_hash(config_text: &str) -> String {
    hex::encode(Sha256::digest(config_text.as_bytes()))
}

/// `<algorithm>-<first 12 hex digits of the config hash>`; the seed is part of the hashed text.
pub fn run_id(algorithm: &str, hash: &str) -> String {
    format!("{algorithm}-{}", &hash[..12])
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::io("manifest", e))?;
        std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(path.display(), e))
    }
}
