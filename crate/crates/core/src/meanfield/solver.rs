//! Fixed-point iteration of the mean-field schedule for one global round.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recursion::best_response;
use super::{ClampEvent, ClientTrajectory, EtaSchedule, MeanFieldSchedule, SolverReport};
use crate::error::SolverError;
use crate::model::{gradient, ModelSpec, Samples};
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// Solver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Local epochs `L`.
    pub epochs: usize,
    /// Weight of the step-size penalty, in `(0, 1]`.
    pub alpha: f64,
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    /// Step size of the warm-start pass.
    pub eta_init: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            alpha: 0.1,
            epsilon: 1e-3,
            max_sweeps: 100,
            eta_min: 0.0,
            eta_max: 1.0,
            eta_init: 0.01,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Invalid(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be >= 1");
        }
        if !(self.eta_min <= self.eta_max) || !self.eta_min.is_finite() || !self.eta_max.is_finite() {
            return bad("eta bounds must be finite with eta_min <= eta_max");
        }
        if !self.eta_init.is_finite() {
            return bad("eta_init must be finite");
        }
        Ok(())
    }
}

/// Schedules at the fixed point.
///
/// `eta` is the best response to `schedule`; `trajectories` are generated by
/// `eta` and `schedule.phi1`, and their averages differ from `schedule` by at
/// most epsilon.
#[derive(Debug, Clone)]
pub struct RoundSolution<T> {
    pub eta: EtaSchedule<T>,
    pub eta_raw: EtaSchedule<T>,
    pub schedule: MeanFieldSchedule<T>,
    pub trajectories: Vec<ClientTrajectory<T>>,
    pub report: SolverReport,
}

/// Rolls every client forward under the aggregated-gradient rule and records full-batch gradients.
pub fn forward_trajectories<T: Scalar, S: Samples<T>>(
    global_w: &ParamVector<T>,
    eta: &EtaSchedule<T>,
    phi1: &[ParamVector<T>],
    spec: &ModelSpec,
    clients: &[S],
) -> Result<Vec<ClientTrajectory<T>>, SolverError> {
    let epochs = phi1.len();
    if eta.n_clients() != clients.len() || eta.epochs() != epochs {
        return Err(SolverError::Invalid(format!(
            "eta schedule {}x{} for {} clients and {epochs} epochs",
            eta.n_clients(),
            eta.epochs(),
            clients.len()
        )));
    }
    if phi1.iter().any(|p| p.len() != global_w.len()) {
        return Err(SolverError::Invalid("phi1 dimension mismatch".into()));
    }
    clients
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let mut w = Vec::with_capacity(epochs + 1);
            let mut grad = Vec::with_capacity(epochs);
            let mut current = global_w.clone();
            for l in 0..epochs {
                grad.push(gradient(spec, &current, data)?);
                let mut next = current.clone();
                next.axpy(-eta.get(i, l), &phi1[l]);
                if !next.is_finite() {
                    return Err(SolverError::NonFinite { client: i, epoch: l + 1 });
                }
                w.push(std::mem::replace(&mut current, next));
            }
            w.push(current);
            Ok(ClientTrajectory { w, grad })
        })
        .collect()
}

/// Averages gradients and parameters over clients in ascending client order.
pub fn update_estimators<T: Scalar>(trajectories: &[ClientTrajectory<T>]) -> Result<MeanFieldSchedule<T>, SolverError> {
    let first = trajectories
        .first()
        .ok_or_else(|| SolverError::Invalid("no trajectories to average".into()))?;
    let (points, d) = (first.w.len(), first.w[0].len());
    if trajectories
        .iter()
        .any(|t| t.w.len() != points || t.grad.len() + 1 != points || t.w.iter().chain(&t.grad).any(|v| v.len() != d))
    {
        return Err(SolverError::Invalid("trajectories have inconsistent shapes".into()));
    }
    let inv_n = T::one() / T::count(trajectories.len());
    let mean = |pick: &dyn Fn(&ClientTrajectory<T>) -> &ParamVector<T>| {
        let mut acc = ParamVector::zeros(d);
        for t in trajectories {
            acc.axpy(T::one(), pick(t));
        }
        acc.scale(inv_n)
    };
    Ok(MeanFieldSchedule {
        phi1: (0..points - 1).map(|l| mean(&|t| &t.grad[l])).collect(),
        phi2: (0..points).map(|l| mean(&|t| &t.w[l])).collect(),
    })
}

/// Largest absolute coordinate change of `phi1` and of `phi2` over all epochs.
pub fn residual<T: Scalar>(old: &MeanFieldSchedule<T>, new: &MeanFieldSchedule<T>) -> Result<(T, T), SolverError> {
    let same = |a: &[ParamVector<T>], b: &[ParamVector<T>]| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
    };
    if !same(&old.phi1, &new.phi1) || !same(&old.phi2, &new.phi2) {
        return Err(SolverError::Invalid("residual of schedules with different shapes".into()));
    }
    let max_diff = |a: &[ParamVector<T>], b: &[ParamVector<T>]| {
        a.iter().zip(b).fold(T::zero(), |m, (x, y)| m.max(x.max_abs_diff(y)))
    };
    Ok((max_diff(&old.phi1, &new.phi1), max_diff(&old.phi2, &new.phi2)))
}

/// Schedule of plain aggregated-gradient descent at a constant step size.
fn warm_start<T: Scalar, S: Samples<T>>(
    global_w: &ParamVector<T>,
    clients: &[S],
    spec: &ModelSpec,
    epochs: usize,
    eta: T,
) -> Result<MeanFieldSchedule<T>, SolverError> {
    let inv_n = T::one() / T::count(clients.len());
    let mut w = global_w.clone();
    let mut phi1 = Vec::with_capacity(epochs);
    let mut phi2 = Vec::with_capacity(epochs + 1);
    for l in 0..epochs {
        let grads = clients
            .par_iter()
            .map(|data| gradient(spec, &w, data))
            .collect::<Result<Vec<_>, _>>()?;
        let mut mean = ParamVector::zeros(w.len());
        for g in &grads {
            mean.axpy(T::one(), g);
        }
        let mean = mean.scale(inv_n);
        let mut next = w.clone();
        next.axpy(-eta, &mean);
        if !next.is_finite() {
            return Err(SolverError::NonFinite { client: 0, epoch: l + 1 });
        }
        phi1.push(mean);
        phi2.push(std::mem::replace(&mut w, next));
    }
    phi2.push(w);
    Ok(MeanFieldSchedule { phi1, phi2 })
}

/// Iterates schedules to a fixed point for one round.
///
/// Each sweep computes the step sizes that are optimal against the current
/// schedule, clamps them, rolls the clients forward and re-averages. The sweep
/// stops once both residuals are at most `epsilon`. Every client starts from
/// `global_w` and sees the same schedule, so one best response serves all rows.
pub fn solve_round<T: Scalar, S: Samples<T>>(
    global_w: &ParamVector<T>,
    clients: &[S],
    spec: &ModelSpec,
    config: &SolverConfig,
) -> Result<RoundSolution<T>, SolverError> {
    config.validate()?;
    if clients.is_empty() {
        return Err(SolverError::Invalid("no clients".into()));
    }
    spec.validate()?;
    global_w.check_len("global parameters", spec.param_count())?;
    let n = clients.len();
    let epochs = config.epochs;
    let alpha = T::lit(config.alpha);
    let epsilon = T::lit(config.epsilon);
    let (lo, hi) = (T::lit(config.eta_min), T::lit(config.eta_max));

    let mut schedule = warm_start(global_w, clients, spec, epochs, T::lit(config.eta_init))?;
    let mut report = SolverReport {
        sweeps: 0,
        residual_phi1: f64::INFINITY,
        residual_phi2: f64::INFINITY,
        clamp_events: Vec::new(),
        converged: false,
    };
    for sweep in 1..=config.max_sweeps {
        let raw = best_response(global_w, &schedule, alpha)?;
        if let Some(l) = raw.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite { client: 0, epoch: l });
        }
        let clamped: Vec<T> = raw.iter().map(|&v| v.max(lo).min(hi)).collect();
        report.clamp_events = (0..n)
            .flat_map(|i| {
                raw.iter()
                    .enumerate()
                    .filter(|(_, &v)| v < lo || v > hi)
                    .map(move |(l, &v)| ClampEvent {
                        client: i,
                        epoch: l,
                        raw: v.as_f64(),
                    })
            })
            .collect();
        let eta = EtaSchedule::from_rows(vec![clamped; n]);
        let trajectories = forward_trajectories(global_w, &eta, &schedule.phi1, spec, clients)?;
        let next = update_estimators(&trajectories)?;
        let (e1, e2) = residual(&schedule, &next)?;
        report.sweeps = sweep;
        report.residual_phi1 = e1.as_f64();
        report.residual_phi2 = e2.as_f64();
        if e1 <= epsilon && e2 <= epsilon {
            report.converged = true;
            return Ok(RoundSolution {
                eta,
                eta_raw: EtaSchedule::from_rows(vec![raw; n]),
                schedule,
                trajectories,
                report,
            });
        }
        schedule = next;
    }
    Err(SolverError::NonConvergence(Box::new(report)))
}
