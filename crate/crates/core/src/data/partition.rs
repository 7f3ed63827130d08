//! Client partitions of a dataset.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::DataError;
use crate::model::RowView;
use crate::scalar::Scalar;

/// How a partition was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum PartitionScheme {
    Iid,
    Pathological {
        n_shards: usize,
        shard_size: usize,
        shards_per_client: usize,
    },
    Dirichlet {
        sigma: f64,
        equal_size: bool,
    },
}

impl PartitionScheme {
    /// Short tag used in metrics output, e.g. `iid`, `pathological`, `dirichlet(0.6)`.
    pub fn tag(&self) -> String {
        match self {
            Self::Iid => "iid".into(),
            Self::Pathological { .. } => "pathological".into(),
            Self::Dirichlet { sigma, .. } => format!("dirichlet({sigma})"),
        }
    }
}

/// Client to sample-index assignment. Each client's indices are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
    pub seed: u64,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn client<'a, T: Scalar>(&'a self, dataset: &'a Dataset<T>, i: usize) -> RowView<'a, Dataset<T>> {
        RowView::new(dataset, &self.assignments[i])
    }

    /// Checks disjointness and index range.
    pub fn validate(&self, n: usize) -> Result<(), DataError> {
        let mut seen = vec![false; n];
        for (i, list) in self.assignments.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(DataError::Consistency(format!("client {i} holds out-of-range index {j}")));
                }
                if std::mem::replace(&mut seen[j], true) {
                    return Err(DataError::Consistency(format!("index {j} assigned twice")));
                }
            }
        }
        Ok(())
    }
}

fn finish(mut assignments: Vec<Vec<usize>>, scheme: PartitionScheme, seed: u64) -> Partition {
    for list in &mut assignments {
        list.sort_unstable();
    }
    Partition {
        assignments,
        scheme,
        seed,
    }
}

fn class_indices(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (j, &y) in labels.iter().enumerate() {
        by_class[y].push(j);
    }
    by_class
}

fn check_clients(n_clients: usize, n: usize) -> Result<(), DataError> {
    if n_clients == 0 {
        return Err(DataError::Config("number of clients must be >= 1".into()));
    }
    if n_clients > n {
        return Err(DataError::Config(format!("{n_clients} clients for only {n} samples")));
    }
    Ok(())
}

/// Stratified IID split with equal client sizes.
///
/// Each class is shuffled, classes are concatenated and samples are dealt
/// round-robin to a shuffled client order, so every client receives each class
/// in proportion up to one sample. The remainder `n mod N` is dropped.
pub fn partition_iid<T: Scalar>(dataset: &Dataset<T>, n_clients: usize, seed: u64) -> Result<Partition, DataError> {
    let labels = dataset.labels();
    check_clients(n_clients, labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for mut class in class_indices(labels, dataset.num_classes()) {
        class.shuffle(&mut rng);
        order.extend(class);
    }
    let mut clients: Vec<usize> = (0..n_clients).collect();
    clients.shuffle(&mut rng);
    let mut assignments = vec![Vec::new(); n_clients];
    for (pos, j) in order.into_iter().enumerate() {
        assignments[clients[pos % n_clients]].push(j);
    }
    let target = labels.len() / n_clients;
    let dropped: usize = assignments.iter().map(|a| a.len() - target).sum();
    for a in &mut assignments {
        a.truncate(target);
    }
    if dropped > 0 {
        info!("iid partition dropped {dropped} remainder samples");
    }
    Ok(finish(assignments, PartitionScheme::Iid, seed))
}

/// Label-sorted shards dealt at random.
///
/// Samples are sorted by label (ties by index) and cut into `n_shards` runs of
/// `shard_size`; shard ids `0..n_shards` are shuffled with `SliceRandom::shuffle`
/// on `ChaCha8Rng::seed_from_u64(seed)` and client `i` takes shuffled positions
/// `i*shards_per_client .. (i+1)*shards_per_client`.
pub fn partition_pathological<T: Scalar>(
    dataset: &Dataset<T>,
    n_shards: usize,
    shard_size: usize,
    shards_per_client: usize,
    n_clients: usize,
    seed: u64,
) -> Result<Partition, DataError> {
    let labels = dataset.labels();
    if n_clients == 0 || shards_per_client == 0 || shard_size == 0 {
        return Err(DataError::Config("shard counts and client count must be >= 1".into()));
    }
    if n_shards != n_clients * shards_per_client {
        return Err(DataError::Config(format!(
            "n_shards {n_shards} != clients {n_clients} x shards_per_client {shards_per_client}"
        )));
    }
    if n_shards * shard_size > labels.len() {
        return Err(DataError::Config(format!(
            "{n_shards} shards of {shard_size} exceed {} samples",
            labels.len()
        )));
    }
    let mut sorted: Vec<usize> = (0..labels.len()).collect();
    sorted.sort_by_key(|&j| (labels[j], j));
    let mut shard_ids: Vec<usize> = (0..n_shards).collect();
    shard_ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = shard_ids
        .chunks(shards_per_client)
        .map(|ids| {
            ids.iter()
                .flat_map(|&s| sorted[s * shard_size..(s + 1) * shard_size].iter().copied())
                .collect()
        })
        .collect();
    let scheme = PartitionScheme::Pathological {
        n_shards,
        shard_size,
        shards_per_client,
    };
    Ok(finish(assignments, scheme, seed))
}

/// Splits `total` by `weights` with the largest-remainder rule (ties to lower index).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = weights.iter().map(|&p| (p * total as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let frac = |i: usize| weights[i] * total as f64 - counts[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-class Dirichlet(σ·1) allocation, optionally rebalanced to equal sizes.
///
/// Rebalancing visits over-full clients in ascending order; each repeatedly
/// hands a sample of its currently most common label (ties to the lowest
/// label) to the smallest under-full client (ties to the lowest index).
/// Samples left once every client is at `floor(n / N)` are dropped.
pub fn partition_dirichlet<T: Scalar>(
    dataset: &Dataset<T>,
    sigma: f64,
    n_clients: usize,
    equal_size: bool,
    seed: u64,
) -> Result<Partition, DataError> {
    let labels = dataset.labels();
    let k = dataset.num_classes();
    check_clients(n_clients, labels.len())?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DataError::Config(format!("dirichlet sigma must be > 0, got {sigma}")));
    }
    let gamma = Gamma::new(sigma, 1.0).map_err(|e| DataError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // held[i][c] = indices of class c at client i
    let mut held = vec![vec![Vec::new(); k]; n_clients];
    for (c, mut class) in class_indices(labels, k).into_iter().enumerate() {
        class.shuffle(&mut rng);
        let mut draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 {
            draws.iter_mut().for_each(|g| *g /= sum);
        } else {
            // every draw underflowed: the limit of a tiny concentration is a one-hot
            draws = vec![0.0; n_clients];
            draws[c % n_clients] = 1.0;
        }
        let mut start = 0;
        for (i, count) in apportion(&draws, class.len()).into_iter().enumerate() {
            held[i][c].extend_from_slice(&class[start..start + count]);
            start += count;
        }
    }
    if equal_size {
        let target = labels.len() / n_clients;
        let mut sizes: Vec<usize> = held.iter().map(|h| h.iter().map(Vec::len).sum()).collect();
        let mut dropped = 0;
        for donor in 0..n_clients {
            while sizes[donor] > target {
                let label = (0..k)
                    .max_by(|&a, &b| held[donor][a].len().cmp(&held[donor][b].len()).then(b.cmp(&a)))
                    .expect("at least one class");
                let j = held[donor][label].pop().expect("non-empty most common label");
                sizes[donor] -= 1;
                let recipient = (0..n_clients).filter(|&i| sizes[i] < target).min_by_key(|&i| (sizes[i], i));
                match recipient {
                    Some(r) => {
                        held[r][label].push(j);
                        sizes[r] += 1;
                    }
                    None => dropped += 1,
                }
            }
        }
        if dropped > 0 {
            info!("dirichlet partition dropped {dropped} remainder samples");
        }
    }
    let assignments = held.into_iter().map(|h| h.into_iter().flatten().collect()).collect();
    Ok(finish(assignments, PartitionScheme::Dirichlet { sigma, equal_size }, seed))
}
