//! Label-marginal heterogeneity (the L1 distance the literature calls a Wasserstein distance).

use serde::{Deserialize, Serialize};

use super::{Dataset, Partition};
use crate::error::DataError;
use crate::scalar::Scalar;

/// Per-client `sum_j |P_client(j) - P_global(j)|` and its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub per_client_distance: Vec<f64>,
    pub mean_distance: f64,
}

/// Client x class sample counts.
pub fn label_histograms<T: Scalar>(partition: &Partition, dataset: &Dataset<T>) -> Vec<Vec<usize>> {
    let labels = dataset.labels();
    partition
        .assignments
        .iter()
        .map(|list| {
            let mut h = vec![0; dataset.num_classes()];
            for &j in list {
                h[labels[j]] += 1;
            }
            h
        })
        .collect()
}

/// Label-marginal heterogeneity of every client against the global label marginal.
///
/// The global marginal is taken over the whole dataset. A client holding no
/// samples has distance 1 (its empirical marginal is treated as all zeros).
pub fn heterogeneity<T: Scalar>(partition: &Partition, dataset: &Dataset<T>) -> Result<HeterogeneityReport, DataError> {
    if partition.num_clients() == 0 {
        return Err(DataError::Consistency("heterogeneity of an empty client list is undefined".into()));
    }
    partition.validate(dataset.labels().len())?;
    let n = dataset.labels().len() as f64;
    let global: Vec<f64> = dataset.class_counts().iter().map(|&c| c as f64 / n).collect();
    let per_client_distance: Vec<f64> = label_histograms(partition, dataset)
        .iter()
        .map(|h| {
            let size: usize = h.iter().sum();
            let denom = size.max(1) as f64;
            h.iter().zip(&global).map(|(&c, &g)| (c as f64 / denom - g).abs()).sum()
        })
        .collect();
    let mean_distance = per_client_distance.iter().sum::<f64>() / per_client_distance.len() as f64;
    Ok(HeterogeneityReport {
        per_client_distance,
        mean_distance,
    })
}
