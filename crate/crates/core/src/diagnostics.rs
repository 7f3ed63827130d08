//! Runtime checks of the convergence theory with constants measured per round.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::meanfield::{backward_eta, costate_eta, terminal_eta, ClientTrajectory, EtaSchedule, MeanFieldSchedule, RoundSolution};
use crate::model::{gradient, ModelKind, ModelSpec, Samples};
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// Measured constants of one round. All norms are Euclidean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    /// Largest gradient norm, over client gradients and the mean gradients used for updates.
    pub p: f64,
    /// Largest parameter norm.
    pub q: f64,
    /// Largest distance from a client parameter to the mean parameter of its epoch.
    pub u: f64,
    pub beta: f64,
    pub delta_max: f64,
    pub delta_min: f64,
}

/// Computes the round's constants; `beta` is passed through from [`beta_estimate`].
pub fn estimate_bounds<T: Scalar>(
    trajectories: &[ClientTrajectory<T>],
    eta: &EtaSchedule<T>,
    schedule: &MeanFieldSchedule<T>,
    beta: f64,
) -> BoundEstimates {
    let mut p = schedule.phi1.iter().fold(0f64, |m, g| m.max(g.norm().as_f64()));
    let (mut q, mut u) = (0f64, 0f64);
    for t in trajectories {
        for g in &t.grad {
            p = p.max(g.norm().as_f64());
        }
        for (w, mean) in t.w.iter().zip(&schedule.phi2) {
            q = q.max(w.norm().as_f64());
            u = u.max(w.distance(mean).as_f64());
        }
    }
    let values = eta.values();
    let delta_max = values.iter().fold(0f64, |m, v| m.max(v.as_f64()));
    let delta_min = values.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
    BoundEstimates {
        p,
        q,
        u,
        beta,
        delta_max,
        delta_min: if values.is_empty() { 0.0 } else { delta_min },
    }
}

/// Smoothness constant estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub value: f64,
    /// True when the value is a probe maximum (a lower estimate) rather than an analytic bound.
    pub lower_estimate: bool,
}

/// `lambda_max(Xa^T Xa / m) (K - 1) / K + 1e-12` for the linear model, where `Xa`
/// carries the bias column. Other models fall back to [`beta_probe`].
///
/// The largest eigenvalue comes from power iteration; the returned value adds
/// the final residual norm so it stays on the safe side of the true eigenvalue.
pub fn beta_estimate<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    batch: &S,
    probe_pairs: usize,
    seed: u64,
) -> Result<BetaEstimate, SolverError> {
    if spec.kind != ModelKind::LinearSoftmax {
        return Ok(BetaEstimate {
            value: beta_probe(spec, batch, probe_pairs, seed)?,
            lower_estimate: true,
        });
    }
    let k = spec.num_classes as f64;
    let lambda = gram_lambda_max(batch);
    Ok(BetaEstimate {
        value: lambda * (k - 1.0) / k + 1e-12,
        lower_estimate: false,
    })
}

fn gram_lambda_max<T: Scalar, S: Samples<T> + ?Sized>(batch: &S) -> f64 {
    let dim = batch.input_dim() + 1;
    let m = batch.len() as f64;
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for j in 0..batch.len() {
            let x = batch.features(j);
            let proj = x.iter().zip(v).map(|(a, b)| a.as_f64() * b).sum::<f64>() + v[dim - 1];
            if proj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(x) {
                *o += proj * a.as_f64();
            }
            out[dim - 1] += proj;
        }
        out.iter_mut().for_each(|o| *o /= m);
        out
    };
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut rho = 0.0;
    let mut resid = f64::INFINITY;
    for _ in 0..1000 {
        let av = apply(&v);
        rho = av.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        resid = av.iter().zip(&v).map(|(a, b)| (a - rho * b).powi(2)).sum::<f64>().sqrt();
        let norm = av.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = av.into_iter().map(|a| a / norm).collect();
        if resid <= 1e-10 * rho.abs().max(1e-300) {
            break;
        }
    }
    rho + resid
}

/// Largest `||grad(w) - grad(w')|| / ||w - w'||` over seeded probe pairs with
/// `w ~ N(0, 0.5^2)` and `w' = w + N(0, 0.05^2)`.
pub fn beta_probe<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    batch: &S,
    probe_pairs: usize,
    seed: u64,
) -> Result<f64, SolverError> {
    if probe_pairs == 0 {
        return Err(SolverError::Invalid("probe_pairs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Normal::new(0.0, 0.5).expect("valid normal");
    let step = Normal::new(0.0, 0.05).expect("valid normal");
    let d = spec.param_count();
    let mut best = 0f64;
    for _ in 0..probe_pairs {
        let w: ParamVector<T> = (0..d).map(|_| T::lit(base.sample(&mut rng))).collect::<Vec<_>>().into();
        let mut w2 = w.clone();
        for k in 0..d {
            w2[k] += T::lit(step.sample(&mut rng));
        }
        let gap = w.distance(&w2).as_f64();
        if gap == 0.0 {
            continue;
        }
        let diff = gradient(spec, &w, batch)?.distance(&gradient(spec, &w2, batch)?).as_f64();
        best = best.max(diff / gap);
    }
    Ok(best)
}

/// A client/epoch whose drift exceeds `l P delta_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftViolation {
    pub client: usize,
    pub epoch: usize,
    pub drift: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub client_ok: Vec<bool>,
    /// Largest `||w_l - w_0|| / (L P delta_max)`; 0 when nothing moved.
    pub worst_ratio: f64,
    pub violations: Vec<DriftViolation>,
}

impl DriftCheck {
    pub fn all_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `||w_{i,l} - w_{i,0}|| <= l P delta_max` for every client and epoch,
/// with a relative floating-point allowance of 1e-12.
pub fn check_drift<T: Scalar>(trajectories: &[ClientTrajectory<T>], bounds: &BoundEstimates, epochs: usize) -> DriftCheck {
    let scale = bounds.p * bounds.delta_max;
    let full = epochs as f64 * scale;
    let mut worst = 0f64;
    let mut violations = Vec::new();
    let client_ok = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut ok = true;
            for (l, w) in t.w.iter().enumerate() {
                let drift = w.distance(&t.w[0]).as_f64();
                let bound = l as f64 * scale;
                if drift > 0.0 {
                    worst = worst.max(if full > 0.0 { drift / full } else { f64::INFINITY });
                }
                if drift > bound * (1.0 + 1e-12) {
                    ok = false;
                    violations.push(DriftViolation {
                        client: i,
                        epoch: l,
                        drift,
                        bound,
                    });
                }
            }
            ok
        })
        .collect();
    DriftCheck {
        client_ok,
        worst_ratio: worst,
        violations,
    }
}

/// Global-loss change against its theoretical upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    pub grad_norm: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// `(b L^2 dmax^2 - L dmin) g^2 + L^2 P b dmin dmax g + b L^4 N P^2 dmax^4`.
pub fn descent_rhs(bounds: &BoundEstimates, grad_norm: f64, epochs: usize, n_clients: usize) -> f64 {
    let (b, p) = (bounds.beta, bounds.p);
    let (dmax, dmin) = (bounds.delta_max, bounds.delta_min);
    let l = epochs as f64;
    let n = n_clients as f64;
    (b * l * l * dmax * dmax - l * dmin) * grad_norm * grad_norm
        + l * l * p * b * dmin * dmax * grad_norm
        + b * l.powi(4) * n * p * p * dmax.powi(4)
}

pub fn descent_report(
    f_before: f64,
    f_after: f64,
    grad_norm: f64,
    bounds: &BoundEstimates,
    epochs: usize,
    n_clients: usize,
) -> DescentReport {
    let lhs = f_after - f_before;
    let rhs = descent_rhs(bounds, grad_norm, epochs, n_clients);
    DescentReport {
        grad_norm,
        lhs,
        rhs,
        slack: rhs - lhs,
    }
}

/// `sum_i sum_{l=0..=L} alpha eta_{i,l}^2 + (1 - alpha) ||w_{i,l} - phi2_l||^2` with `eta_{i,L} = 0`.
pub fn objective_value<T: Scalar>(
    trajectories: &[ClientTrajectory<T>],
    eta: &EtaSchedule<T>,
    phi2: &[ParamVector<T>],
    alpha: f64,
) -> f64 {
    let mut total = 0.0;
    for (i, t) in trajectories.iter().enumerate() {
        total += alpha * eta.row(i).iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        for (w, mean) in t.w.iter().zip(phi2) {
            total += (1.0 - alpha) * w.distance(mean).as_f64().powi(2);
        }
    }
    total
}

/// [`objective_value`] of the parameter paths `w_{l+1} = w_l - eta_l phi1_l` from `global_w`,
/// without evaluating gradients.
pub fn unrolled_objective<T: Scalar>(
    global_w: &ParamVector<T>,
    eta: &EtaSchedule<T>,
    schedule: &MeanFieldSchedule<T>,
    alpha: f64,
) -> f64 {
    let paths: Vec<ClientTrajectory<T>> = (0..eta.n_clients())
        .map(|i| {
            let mut w = vec![global_w.clone()];
            for (l, phi) in schedule.phi1.iter().enumerate() {
                let mut next = w[l].clone();
                next.axpy(-eta.get(i, l), phi);
                w.push(next);
            }
            ClientTrajectory { w, grad: Vec::new() }
        })
        .collect();
    objective_value(&paths, eta, &schedule.phi2, alpha)
}

/// Agreement of the independent step-size routes at a fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAgreement {
    pub compared_clients: usize,
    /// Clients skipped because a step size was clamped.
    pub skipped_clients: usize,
    pub max_backward_vs_costate: f64,
    pub max_backward_vs_solver: f64,
    /// Largest gap between the last-epoch step size and its closed form.
    pub max_terminal_gap: f64,
}

pub fn path_agreement<T: Scalar>(solution: &RoundSolution<T>, alpha: f64) -> Result<PathAgreement, SolverError> {
    let alpha_t = T::lit(alpha);
    let mut out = PathAgreement {
        compared_clients: 0,
        skipped_clients: 0,
        max_backward_vs_costate: 0.0,
        max_backward_vs_solver: 0.0,
        max_terminal_gap: 0.0,
    };
    let last = solution.schedule.epochs() - 1;
    for (i, traj) in solution.trajectories.iter().enumerate() {
        let raw = solution.eta_raw.row(i);
        if raw != solution.eta.row(i) {
            out.skipped_clients += 1;
            continue;
        }
        out.compared_clients += 1;
        let backward = backward_eta(traj, &solution.schedule, alpha_t, (T::neg_infinity(), T::infinity()))?.raw;
        let costate = costate_eta(traj, &solution.schedule, alpha_t)?.eta;
        let terminal = terminal_eta(traj, &solution.schedule, alpha_t)?;
        for l in 0..=last {
            out.max_backward_vs_costate = out.max_backward_vs_costate.max((backward[l] - costate[l]).abs().as_f64());
            out.max_backward_vs_solver = out.max_backward_vs_solver.max((backward[l] - raw[l]).abs().as_f64());
        }
        out.max_terminal_gap = out.max_terminal_gap.max((terminal - raw[last]).abs().as_f64());
    }
    Ok(out)
}

/// A raw step size outside the open unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaViolation {
    pub client: usize,
    pub epoch: usize,
    pub raw: f64,
}

/// Per-round diagnostics written to the JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub estimates: BoundEstimates,
    pub eta_in_unit_interval: bool,
    pub eta_violations: Vec<EtaViolation>,
    /// Fraction of raw step sizes inside `(0, 1)`.
    pub raw_eta_unit_fraction: f64,
    pub drift_bound_satisfied: bool,
    pub drift_worst_ratio: f64,
    pub drift_violations: Vec<DriftViolation>,
    pub descent: Option<DescentReport>,
    pub objective_value: f64,
    /// Objective of the constant base-rate schedule under the same fixed point.
    pub constant_rate_objective: f64,
    pub path_agreement: PathAgreement,
}

/// Step-size monitor: raw values outside `(0, 1)` and the fraction inside.
pub fn eta_unit_interval<T: Scalar>(eta_raw: &EtaSchedule<T>) -> (Vec<EtaViolation>, f64) {
    let mut violations = Vec::new();
    for i in 0..eta_raw.n_clients() {
        for (l, &v) in eta_raw.row(i).iter().enumerate() {
            let v = v.as_f64();
            if !(v > 0.0 && v < 1.0) {
                violations.push(EtaViolation { client: i, epoch: l, raw: v });
            }
        }
    }
    let total = eta_raw.values().len().max(1) as f64;
    let inside = eta_raw.values().len() - violations.len();
    (violations, inside as f64 / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descent_rhs_hand_fixture() {
        let b = BoundEstimates {
            p: 1.0,
            q: 0.0,
            u: 0.0,
            beta: 1.0,
            delta_max: 0.1,
            delta_min: 0.1,
        };
        assert!((descent_rhs(&b, 1.0, 1, 1) + 0.0799).abs() < 1e-15);
        let zero = BoundEstimates {
            delta_max: 0.0,
            delta_min: 0.0,
            ..b
        };
        let r = descent_report(2.0, 2.0, 1.0, &zero, 3, 5);
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }
}
