//! Per-round metrics CSV.
//!
//! Header: `run_id,round,algorithm,dataset,distribution,accuracy,loss,test_loss,solver_sweeps,clamp_events,drift_ok,wall_time`.
//! `loss` is the training loss over all clients' data, `accuracy` and
//! `test_loss` are measured on the test set. FedAgg-only columns are empty
//! for other algorithms.

use std::io::Write;
use std::path::Path;

use fedagg_core::federation::RoundRecord;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub round: usize,
    pub algorithm: String,
    pub dataset: String,
    pub distribution: String,
    pub accuracy: f64,
    pub loss: f64,
    pub test_loss: f64,
    pub solver_sweeps: Option<usize>,
    pub clamp_events: Option<usize>,
    pub drift_ok: Option<bool>,
    pub wall_time: f64,
}

/// Run-level labels repeated on every row.
#[derive(Debug, Clone)]
pub struct RunTags {
    pub run_id: String,
    pub algorithm: String,
    pub dataset: String,
    pub distribution: String,
}

impl MetricsRow {
    pub fn from_record(tags: &RunTags, r: &RoundRecord) -> Self {
        Self {
            run_id: tags.run_id.clone(),
            round: r.round,
            algorithm: tags.algorithm.clone(),
            dataset: tags.dataset.clone(),
            distribution: tags.distribution.clone(),
            accuracy: r.test_accuracy,
            loss: r.global_loss,
            test_loss: r.test_loss,
            solver_sweeps: r.solver_report.as_ref().map(|s| s.sweeps),
            clamp_events: r.solver_report.as_ref().map(|s| s.clamp_events.len()),
            drift_ok: r.bound_report.as_ref().map(|b| b.drift_bound_satisfied),
            wall_time: r.wall_time,
        }
    }
}

/// Append-only writer that flushes after every row.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl MetricsWriter<std::fs::File> {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path.display(), e))?;
        Ok(Self {
            inner: csv::Writer::from_writer(file),
        })
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn append(&mut self, row: &MetricsRow) -> Result<(), CliError> {
        self.inner.serialize(row).map_err(|e| CliError::io("metrics csv", e))?;
        self.inner.flush().map_err(|e| CliError::io("metrics csv", e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|e| CliError::io(path.display(), e))
}
