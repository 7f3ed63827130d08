//! Client-side training.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::config::{LocalSteps, UpdateRule};
use crate::error::FedError;
use crate::model::{gradient, ModelSpec, RowView, Samples};
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// Mini-batch settings shared by all local trainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Batching {
    pub batch_size: usize,
    pub steps_per_epoch: LocalSteps,
}

impl Batching {
    /// One full-data step per epoch.
    pub fn full_batch() -> Self {
        Self {
            batch_size: usize::MAX,
            steps_per_epoch: LocalSteps::Fixed(1),
        }
    }
}

/// Seeded stream of mini-batches over one client's data.
///
/// Batches walk a shuffled permutation and reshuffle once it is exhausted.
/// When the batch covers the whole client the natural order is used, so a
/// full-batch step sees exactly the same data as a full-batch gradient.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    steps: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, batching: &Batching, rng: ChaCha8Rng) -> Self {
        let batch_size = batching.batch_size.min(n).max(1);
        let steps = match batching.steps_per_epoch {
            LocalSteps::FullPass => n.div_ceil(batch_size),
            LocalSteps::Fixed(k) => k,
        };
        Self {
            order: (0..n).collect(),
            cursor: n,
            batch_size,
            steps,
            rng,
        }
    }

    fn next_rows(&mut self) -> &[usize] {
        let n = self.order.len();
        if self.batch_size >= n {
            return &self.order;
        }
        if self.cursor >= n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor = (start + self.batch_size).min(n);
        &self.order[start..self.cursor]
    }
}

fn check_finite<T: Scalar>(w: &ParamVector<T>, epoch: usize) -> Result<(), FedError> {
    if w.is_finite() {
        Ok(())
    } else {
        Err(FedError::Divergence(format!("non-finite parameters after local epoch {epoch}")))
    }
}

/// FedAgg client update with a per-epoch step-size row.
///
/// `Aggregated` applies one step `w -= eta_l phi1_l` per epoch and touches no
/// data; `Local` applies `steps_per_epoch` mini-batch steps of the client's own
/// gradient at `eta_l`.
#[allow(clippy::too_many_arguments)]
pub fn local_train_fedagg<T: Scalar, S: Samples<T> + ?Sized>(
    client: &S,
    w0: &ParamVector<T>,
    eta_row: &[T],
    rule: UpdateRule,
    phi1: &[ParamVector<T>],
    spec: &ModelSpec,
    batching: &Batching,
    rng: ChaCha8Rng,
) -> Result<ParamVector<T>, FedError> {
    if rule == UpdateRule::Aggregated && eta_row.len() != phi1.len() {
        return Err(FedError::Config(format!(
            "eta row of length {} for {} mean gradients",
            eta_row.len(),
            phi1.len()
        )));
    }
    let mut w = w0.clone();
    match rule {
        UpdateRule::Aggregated => {
            for (l, (&eta, phi)) in eta_row.iter().zip(phi1).enumerate() {
                w.axpy(-eta, phi);
                check_finite(&w, l)?;
            }
        }
        UpdateRule::Local => {
            let mut stream = BatchStream::new(client.len(), batching, rng);
            for (l, &eta) in eta_row.iter().enumerate() {
                for _ in 0..stream.steps {
                    let rows = stream.next_rows();
                    let g = gradient(spec, &w, &RowView::new(client, rows))?;
                    w.axpy(-eta, &g);
                }
                check_finite(&w, l)?;
            }
        }
    }
    Ok(w)
}

/// Local optimiser of the baseline algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineOptimizer {
    FedAvg,
    /// Proximal term `mu (w - w0)` added to every gradient.
    FedProx { mu: f64 },
}

/// `epochs x steps_per_epoch` SGD steps at `base_lr`.
#[allow(clippy::too_many_arguments)]
pub fn local_train_baseline<T: Scalar, S: Samples<T> + ?Sized>(
    client: &S,
    w0: &ParamVector<T>,
    optimizer: BaselineOptimizer,
    base_lr: T,
    epochs: usize,
    spec: &ModelSpec,
    batching: &Batching,
    rng: ChaCha8Rng,
) -> Result<ParamVector<T>, FedError> {
    let mu = match optimizer {
        BaselineOptimizer::FedAvg => T::zero(),
        BaselineOptimizer::FedProx { mu } => T::lit(mu),
    };
    let mut w = w0.clone();
    let mut stream = BatchStream::new(client.len(), batching, rng);
    for l in 0..epochs {
        for _ in 0..stream.steps {
            let rows = stream.next_rows();
            let mut g = gradient(spec, &w, &RowView::new(client, rows))?;
            if mu != T::zero() {
                g.axpy(mu, &w.sub(w0));
            }
            if base_lr != T::zero() {
                w.axpy(-base_lr, &g);
            }
        }
        check_finite(&w, l)?;
    }
    Ok(w)
}
