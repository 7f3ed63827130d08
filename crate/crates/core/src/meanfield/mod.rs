//! Per-round mean-field estimators and the adaptive step-size schedule.

mod recursion;
mod solver;

pub use recursion::{backward_eta, best_response, costate_eta, terminal_eta, CostatePath, EtaRow};
pub use solver::{forward_trajectories, residual, solve_round, update_estimators, RoundSolution, SolverConfig};

use serde::{Deserialize, Serialize};

use crate::param::ParamVector;
use crate::scalar::Scalar;

/// Mean gradient per epoch (`phi1`, `L` entries) and mean parameter per epoch (`phi2`, `L + 1` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSchedule<T> {
    pub phi1: Vec<ParamVector<T>>,
    pub phi2: Vec<ParamVector<T>>,
}

impl<T: Scalar> MeanFieldSchedule<T> {
    pub fn epochs(&self) -> usize {
        self.phi1.len()
    }

    pub fn is_consistent(&self) -> bool {
        let d = self.phi2.first().map_or(0, ParamVector::len);
        self.phi2.len() == self.phi1.len() + 1 && self.phi1.iter().chain(&self.phi2).all(|v| v.len() == d)
    }
}

/// Step sizes `eta[i][l]` for `N` clients and `L` epochs, row-major. `eta[i][L] = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSchedule<T> {
    n_clients: usize,
    epochs: usize,
    values: Vec<T>,
}

impl<T: Scalar> EtaSchedule<T> {
    pub fn constant(n_clients: usize, epochs: usize, value: T) -> Self {
        Self {
            n_clients,
            epochs,
            values: vec![value; n_clients * epochs],
        }
    }

    /// Builds a schedule from equal-length rows.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let epochs = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == epochs), "ragged eta rows");
        Self {
            n_clients: rows.len(),
            epochs,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn get(&self, client: usize, epoch: usize) -> T {
        self.values[client * self.epochs + epoch]
    }

    pub fn row(&self, client: usize) -> &[T] {
        &self.values[client * self.epochs..(client + 1) * self.epochs]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// One client's parameters `w[0..=L]` and full-batch gradients `grad[0..L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientTrajectory<T> {
    pub w: Vec<ParamVector<T>>,
    pub grad: Vec<ParamVector<T>>,
}

/// A raw step size that was projected onto the configured bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub client: usize,
    pub epoch: usize,
    pub raw: f64,
}

/// Outcome of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub sweeps: usize,
    pub residual_phi1: f64,
    pub residual_phi2: f64,
    pub clamp_events: Vec<ClampEvent>,
    pub converged: bool,
}
