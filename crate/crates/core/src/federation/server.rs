//! Server-side adaptive optimisers applied to the round's pseudo-gradient.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::param::ParamVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServerVariant {
    Adam,
    Adagrad,
    Yogi,
}

/// First and second moments, zero-initialised.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState<T> {
    pub m: ParamVector<T>,
    pub v: ParamVector<T>,
}

impl<T: Scalar> ServerState<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
        }
    }
}

/// Hyperparameters of the server optimiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

/// One server step on `pseudo_gradient = w_before - aggregate`, without bias correction:
///
/// `m = b1 m + (1-b1) g`; Adam `v = b2 v + (1-b2) g^2`; Adagrad `v += g^2`;
/// Yogi `v -= (1-b2) g^2 sign(v - g^2)`; then `w -= lr m / (sqrt(v) + tau)`.
pub fn server_adaptive_update<T: Scalar>(
    global_w: &ParamVector<T>,
    pseudo_gradient: &ParamVector<T>,
    state: &mut ServerState<T>,
    variant: ServerVariant,
    hyper: &ServerHyper,
) -> Result<ParamVector<T>, ModelError> {
    let d = global_w.len();
    pseudo_gradient.check_len("pseudo-gradient", d)?;
    state.m.check_len("first moment", d)?;
    state.v.check_len("second moment", d)?;
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let (lr, tau) = (T::lit(hyper.lr), T::lit(hyper.tau));
    let one = T::one();
    let mut out = global_w.clone();
    for k in 0..d {
        let g = pseudo_gradient[k];
        let g2 = g * g;
        let m = b1 * state.m[k] + (one - b1) * g;
        let v_old = state.v[k];
        let v = match variant {
            ServerVariant::Adam => b2 * v_old + (one - b2) * g2,
            ServerVariant::Adagrad => v_old + g2,
            ServerVariant::Yogi => v_old - (one - b2) * g2 * sign(v_old - g2),
        };
        state.m[k] = m;
        state.v[k] = v;
        out[k] = out[k] - lr * m / (v.sqrt() + tau);
    }
    Ok(out)
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
