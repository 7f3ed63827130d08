//! Optimal step sizes of one client given the mean-field schedule.
//!
//! With `c = (1 - alpha) / alpha` the client minimises
//! `sum_l alpha eta_l^2 + (1 - alpha) ||w_l - phi2_l||^2` subject to
//! `w_{l+1} = w_l - eta_l phi1_l`. Three routes to the optimum live here: the
//! backward recursion in `eta`, the costate recursion, and the closed-loop
//! linear system solved by [`best_response`].

use crate::error::SolverError;
use crate::param::ParamVector;
use crate::scalar::Scalar;

use super::{ClientTrajectory, MeanFieldSchedule};

/// Raw and clamped step sizes for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaRow<T> {
    pub raw: Vec<T>,
    pub clamped: Vec<T>,
}

/// Costates `lambda[0..=L]` and the step sizes they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct CostatePath<T> {
    pub lambda: Vec<ParamVector<T>>,
    pub eta: Vec<T>,
}

fn weight_ratio<T: Scalar>(alpha: T) -> T {
    (T::one() - alpha) / alpha
}

fn check_shapes<T: Scalar>(traj: &ClientTrajectory<T>, schedule: &MeanFieldSchedule<T>) -> Result<(), SolverError> {
    let l = schedule.epochs();
    if !schedule.is_consistent() || traj.w.len() != l + 1 || traj.grad.len() != l {
        return Err(SolverError::Invalid(format!(
            "trajectory with {} points / {} gradients does not match a {l}-epoch schedule",
            traj.w.len(),
            traj.grad.len()
        )));
    }
    Ok(())
}

/// Backward recursion from `eta_L = 0`:
///
/// `eta_l (1 + c (L-l) ||phi1_l||^2) = c phi1_l . ((L-l) w_l - sum_{r>l} (L-r) eta_r phi1_r - sum_{k>l} phi2_k)`.
///
/// Later raw values feed earlier ones; `clamped` projects each onto `bounds`.
pub fn backward_eta<T: Scalar>(
    traj: &ClientTrajectory<T>,
    schedule: &MeanFieldSchedule<T>,
    alpha: T,
    bounds: (T, T),
) -> Result<EtaRow<T>, SolverError> {
    check_shapes(traj, schedule)?;
    let epochs = schedule.epochs();
    let c = weight_ratio(alpha);
    let d = traj.w[0].len();
    let mut eta_tail = ParamVector::zeros(d);
    let mut phi2_tail = schedule.phi2[epochs].clone();
    let mut raw = vec![T::zero(); epochs];
    for l in (0..epochs).rev() {
        let phi = &schedule.phi1[l];
        let remaining = T::count(epochs - l);
        let mut s = traj.w[l].scale(remaining);
        s.axpy(-T::one(), &eta_tail);
        s.axpy(-T::one(), &phi2_tail);
        raw[l] = c * phi.dot(&s) / (T::one() + c * remaining * phi.norm_sq());
        eta_tail.axpy(remaining * raw[l], phi);
        phi2_tail.axpy(T::one(), &schedule.phi2[l]);
    }
    let clamped = raw.iter().map(|&v| v.max(bounds.0).min(bounds.1)).collect();
    Ok(EtaRow { raw, clamped })
}

/// Costate route: `lambda_L = 2(1-alpha)(w_L - phi2_L)`,
/// `lambda_l = lambda_{l+1} + 2(1-alpha)(w_l - phi2_l)`, `eta_l = phi1_l . lambda_{l+1} / (2 alpha)`.
pub fn costate_eta<T: Scalar>(
    traj: &ClientTrajectory<T>,
    schedule: &MeanFieldSchedule<T>,
    alpha: T,
) -> Result<CostatePath<T>, SolverError> {
    check_shapes(traj, schedule)?;
    let epochs = schedule.epochs();
    let two = T::lit(2.0);
    let gain = two * (T::one() - alpha);
    let mut lambda = vec![ParamVector::zeros(traj.w[0].len()); epochs + 1];
    lambda[epochs] = traj.w[epochs].sub(&schedule.phi2[epochs]).scale(gain);
    for l in (0..epochs).rev() {
        let mut next = lambda[l + 1].clone();
        next.axpy(gain, &traj.w[l].sub(&schedule.phi2[l]));
        lambda[l] = next;
    }
    let eta = (0..epochs)
        .map(|l| schedule.phi1[l].dot(&lambda[l + 1]) / (two * alpha))
        .collect();
    Ok(CostatePath { lambda, eta })
}

/// Closed form for the last epoch: `c phi1_{L-1} . (w_{L-1} - phi2_L) / (1 + c ||phi1_{L-1}||^2)`.
pub fn terminal_eta<T: Scalar>(
    traj: &ClientTrajectory<T>,
    schedule: &MeanFieldSchedule<T>,
    alpha: T,
) -> Result<T, SolverError> {
    check_shapes(traj, schedule)?;
    let last = schedule.epochs() - 1;
    let c = weight_ratio(alpha);
    let phi = &schedule.phi1[last];
    let gap = traj.w[last].sub(&schedule.phi2[last + 1]);
    Ok(c * phi.dot(&gap) / (T::one() + c * phi.norm_sq()))
}

/// Step sizes that satisfy the backward recursion on their own trajectory.
///
/// Substituting `w_l = w_0 - sum_{p<l} eta_p phi1_p` into the recursion gives
/// `(I + c G) eta = b` with `G_lp = (L - max(l,p)) phi1_l . phi1_p` and
/// `b_l = c phi1_l . sum_{k>l} (w_0 - phi2_k)`. `G` is a sum of Gram matrices,
/// so the system is symmetric positive definite and solved by Cholesky.
pub fn best_response<T: Scalar>(
    global_w: &ParamVector<T>,
    schedule: &MeanFieldSchedule<T>,
    alpha: T,
) -> Result<Vec<T>, SolverError> {
    if !schedule.is_consistent() || schedule.phi2[0].len() != global_w.len() {
        return Err(SolverError::Invalid("schedule does not match parameter dimension".into()));
    }
    let epochs = schedule.epochs();
    let c = weight_ratio(alpha);
    let mut a = vec![T::zero(); epochs * epochs];
    for l in 0..epochs {
        for p in 0..=l {
            let weight = T::count(epochs - l.max(p));
            let v = c * weight * schedule.phi1[l].dot(&schedule.phi1[p]);
            a[l * epochs + p] = v;
            a[p * epochs + l] = v;
        }
        a[l * epochs + l] += T::one();
    }
    let mut tail = ParamVector::zeros(global_w.len());
    let mut b = vec![T::zero(); epochs];
    for l in (0..epochs).rev() {
        tail.axpy(T::one(), &global_w.sub(&schedule.phi2[l + 1]));
        b[l] = c * schedule.phi1[l].dot(&tail);
    }
    solve_spd(&mut a, &mut b, epochs)?;
    Ok(b)
}

/// In-place Cholesky solve of a small dense SPD system; the solution overwrites `b`.
fn solve_spd<T: Scalar>(a: &mut [T], b: &mut [T], n: usize) -> Result<(), SolverError> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > T::zero()) {
            return Err(SolverError::Invalid("step-size system is not positive definite".into()));
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[k * n + i] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    Ok(())
}
