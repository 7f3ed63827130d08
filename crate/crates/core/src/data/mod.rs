//! Datasets, partitioning across clients, and label heterogeneity.

mod heterogeneity;
mod idx;
mod partition;
mod synth;

pub use heterogeneity::{heterogeneity, label_histograms, HeterogeneityReport};
pub use idx::{load_idx, parse_idx};
pub use partition::{partition_dirichlet, partition_iid, partition_pathological, Partition, PartitionScheme};
pub use synth::synth_generate;

use crate::error::DataError;
use crate::model::Samples;
use crate::scalar::Scalar;

/// Labelled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Vec<T>, labels: Vec<usize>, input_dim: usize, num_classes: usize) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::Consistency("dataset has no samples".into()));
        }
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(DataError::Consistency(format!(
                "{} feature values for {} samples of dimension {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::Consistency(format!("label {bad} >= num_classes {num_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Consistency("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        let n = n.max(1).min(self.labels.len());
        self.labels.truncate(n);
        self.features.truncate(n * self.input_dim);
    }
}

impl<T: Scalar> Samples<T> for Dataset<T> {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn features(&self, j: usize) -> &[T] {
        &self.features[j * self.input_dim..(j + 1) * self.input_dim]
    }
    fn label(&self, j: usize) -> usize {
        self.labels[j]
    }
}
