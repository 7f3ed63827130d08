//! Flat parameter vectors.

use std::ops::{Index, IndexMut};

use crate::error::ModelError;
use crate::scalar::Scalar;

/// Flat coordinate vector of model parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn from_vec(coords: Vec<T>) -> Self {
        Self(coords)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    /// Euclidean norm.
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: T, x: &Self) {
        for (s, &v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }

    pub fn scale(&self, a: T) -> Self {
        Self(self.0.iter().map(|&v| a * v).collect())
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub(crate) fn check_len(&self, what: &'static str, expected: usize) -> Result<(), ModelError> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(ModelError::Dimension {
                what,
                expected,
                actual: self.len(),
            })
        }
    }
}

impl<T> Index<usize> for ParamVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for ParamVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Scalar> From<Vec<T>> for ParamVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

/// Returns `w - eta * g`.
pub fn sgd_step<T: Scalar>(w: &ParamVector<T>, g: &ParamVector<T>, eta: T) -> Result<ParamVector<T>, ModelError> {
    g.check_len("gradient", w.len())?;
    if !eta.is_finite() {
        return Err(ModelError::NonFinite("step size"));
    }
    let mut out = w.clone();
    if eta != T::zero() {
        out.axpy(-eta, g);
    }
    Ok(out)
}
