//! Dense brute-force iteration of the mean-field map for scalar quadratics
//! `F_i(w) = (w - a_i)^2 / 2`.
//!
//! The map acts on the full state (every client's parameter path and gradient
//! path). Given the state it averages the paths, finds each client's optimal
//! step sizes by minimising
//! `alpha |eta|^2 + (1 - alpha) sum_l (w_l(eta) - mean_w_l)^2` directly as a
//! least-squares problem (normal equations, Gaussian elimination with partial
//! pivoting), clamps, rolls the paths forward and recomputes the gradients.
//! Iterated with damping until the state stops moving.

pub struct QuadraticInstance {
    pub targets: Vec<f64>,
    pub global_w: f64,
    pub epochs: usize,
    pub alpha: f64,
    pub eta_bounds: (f64, f64),
}

pub struct OracleFixedPoint {
    /// `eta[i][l]`, clamped.
    pub eta: Vec<Vec<f64>>,
    pub mean_grad: Vec<f64>,
    pub mean_w: Vec<f64>,
    pub iterations: usize,
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Unclamped minimiser of the client objective for fixed averages.
fn optimal_steps(global_w: f64, mean_grad: &[f64], mean_w: &[f64], alpha: f64) -> Vec<f64> {
    let epochs = mean_grad.len();
    // w_l = global_w - sum_{p<l} eta_p mean_grad_p, so w_l - mean_w_l = r_l - (M eta)_l
    let m = |l: usize, p: usize| if p < l { mean_grad[p] } else { 0.0 };
    let r: Vec<f64> = (0..=epochs).map(|l| global_w - mean_w[l]).collect();
    let mut lhs = vec![vec![0.0; epochs]; epochs];
    let mut rhs = vec![0.0; epochs];
    for p in 0..epochs {
        for q in 0..epochs {
            let mtm: f64 = (0..=epochs).map(|l| m(l, p) * m(l, q)).sum();
            lhs[p][q] = (1.0 - alpha) * mtm + if p == q { alpha } else { 0.0 };
        }
        rhs[p] = (1.0 - alpha) * (0..=epochs).map(|l| m(l, p) * r[l]).sum::<f64>();
    }
    gauss_solve(lhs, rhs)
}

pub fn solve(inst: &QuadraticInstance, tol: f64, max_iter: usize) -> Option<OracleFixedPoint> {
    let n = inst.targets.len();
    let epochs = inst.epochs;
    // state: paths[i][l] for l = 0..=L, grads[i][l] for l = 0..L
    let mut paths = vec![vec![inst.global_w; epochs + 1]; n];
    let mut grads: Vec<Vec<f64>> = (0..n).map(|i| vec![inst.global_w - inst.targets[i]; epochs]).collect();
    let damping = 0.5;
    for it in 1..=max_iter {
        let mean_grad: Vec<f64> = (0..epochs).map(|l| grads.iter().map(|g| g[l]).sum::<f64>() / n as f64).collect();
        let mean_w: Vec<f64> = (0..=epochs).map(|l| paths.iter().map(|w| w[l]).sum::<f64>() / n as f64).collect();
        let steps: Vec<f64> = optimal_steps(inst.global_w, &mean_grad, &mean_w, inst.alpha)
            .into_iter()
            .map(|v| v.clamp(inst.eta_bounds.0, inst.eta_bounds.1))
            .collect();
        let mut change = 0f64;
        for i in 0..n {
            let mut w = inst.global_w;
            let mut new_w = vec![w];
            let mut new_g = Vec::new();
            for l in 0..epochs {
                new_g.push(w - inst.targets[i]);
                w -= steps[l] * mean_grad[l];
                new_w.push(w);
            }
            for l in 0..=epochs {
                let v = damping * new_w[l] + (1.0 - damping) * paths[i][l];
                change = change.max((v - paths[i][l]).abs());
                paths[i][l] = v;
            }
            for l in 0..epochs {
                let v = damping * new_g[l] + (1.0 - damping) * grads[i][l];
                change = change.max((v - grads[i][l]).abs());
                grads[i][l] = v;
            }
        }
        if change < tol {
            return Some(OracleFixedPoint {
                eta: vec![steps; n],
                mean_grad,
                mean_w,
                iterations: it,
            });
        }
    }
    None
}
