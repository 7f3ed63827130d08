//! Differentiable classifiers: linear softmax and a one-hidden-layer MLP.
//!
//! Parameters are stored layer by layer. Each layer is an `out x (in + 1)`
//! row-major matrix whose last column is the bias, i.e. inputs carry an
//! appended constant-1 feature. The MLP hidden activation is `tanh`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp1Hidden,
    /// `F(w) = mean_j 0.5 ||w - x_j||^2`; labels are ignored. Test oracle only.
    #[doc(hidden)]
    ScalarQuadratic,
}

/// Architecture description; determines the parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            input_dim,
            num_classes,
            hidden_dim: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1Hidden,
            input_dim,
            num_classes,
            hidden_dim,
        }
    }

    #[doc(hidden)]
    pub fn quadratic(dim: usize) -> Self {
        Self {
            kind: ModelKind::ScalarQuadratic,
            input_dim: dim,
            num_classes: 1,
            hidden_dim: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearSoftmax => (self.input_dim + 1) * self.num_classes,
            ModelKind::Mlp1Hidden => {
                (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_classes
            }
            ModelKind::ScalarQuadratic => self.input_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::Spec("input_dim must be >= 1".into()));
        }
        match self.kind {
            ModelKind::ScalarQuadratic => Ok(()),
            _ if self.num_classes < 2 => Err(ModelError::Spec("num_classes must be >= 2".into())),
            ModelKind::Mlp1Hidden if self.hidden_dim == 0 => {
                Err(ModelError::Spec("hidden_dim must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Read access to a set of labelled samples.
pub trait Samples<T>: Sync {
    fn len(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn features(&self, j: usize) -> &[T];
    fn label(&self, j: usize) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Owned mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl<T: Scalar> Batch<T> {
    /// Builds a batch from row-major features; rejects empty or non-finite input.
    pub fn new(features: Vec<T>, labels: Vec<usize>, input_dim: usize) -> Result<Self, ModelError> {
        if labels.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if features.len() != labels.len() * input_dim {
            return Err(ModelError::Dimension {
                what: "batch features",
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("batch features"));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    /// Copies the selected rows of any sample source.
    pub fn gather<S: Samples<T> + ?Sized>(source: &S, rows: &[usize]) -> Result<Self, ModelError> {
        let d = source.input_dim();
        let mut features = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(source.features(r));
            labels.push(source.label(r));
        }
        Self::new(features, labels, d)
    }
}

impl<T: Scalar> Samples<T> for Batch<T> {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn features(&self, j: usize) -> &[T] {
        &self.features[j * self.input_dim..(j + 1) * self.input_dim]
    }
    fn label(&self, j: usize) -> usize {
        self.labels[j]
    }
}

/// View of selected rows of another sample source.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a, S: ?Sized> {
    source: &'a S,
    rows: &'a [usize],
}

impl<'a, S: ?Sized> RowView<'a, S> {
    pub fn new(source: &'a S, rows: &'a [usize]) -> Self {
        Self { source, rows }
    }
}

impl<T: Scalar, S: Samples<T> + ?Sized> Samples<T> for RowView<'_, S> {
    fn len(&self) -> usize {
        self.rows.len()
    }
    fn input_dim(&self) -> usize {
        self.source.input_dim()
    }
    fn features(&self, j: usize) -> &[T] {
        self.source.features(self.rows[j])
    }
    fn label(&self, j: usize) -> usize {
        self.source.label(self.rows[j])
    }
}

fn check_inputs<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    w: &ParamVector<T>,
    batch: &S,
) -> Result<(), ModelError> {
    spec.validate()?;
    w.check_len("parameters", spec.param_count())?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if batch.input_dim() != spec.input_dim {
        return Err(ModelError::Dimension {
            what: "input features",
            expected: spec.input_dim,
            actual: batch.input_dim(),
        });
    }
    if spec.kind != ModelKind::ScalarQuadratic {
        for j in 0..batch.len() {
            let label = batch.label(j);
            if label >= spec.num_classes {
                return Err(ModelError::Label {
                    label,
                    num_classes: spec.num_classes,
                });
            }
        }
    }
    Ok(())
}

/// `out[r] = W[r, ..n] . x + W[r, n]` for an `rows x (n + 1)` block.
fn affine<T: Scalar>(block: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &block[r * (n + 1)..(r + 1) * (n + 1)];
        let mut acc = row[n];
        for (&a, &b) in row[..n].iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
}

/// `G[r, ..] += delta[r] * [x, 1]` for an `rows x (n + 1)` block.
fn accumulate_outer<T: Scalar>(grad: &mut [T], delta: &[T], x: &[T]) {
    let n = x.len();
    for (r, &d) in delta.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        let row = &mut grad[r * (n + 1)..(r + 1) * (n + 1)];
        for (g, &v) in row[..n].iter_mut().zip(x) {
            *g += d * v;
        }
        row[n] += d;
    }
}

/// Log-sum-exp with max subtraction.
fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = z.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

struct Scratch<T> {
    hidden: Vec<T>,
    logits: Vec<T>,
    delta_hidden: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            hidden: vec![T::zero(); spec.hidden_dim],
            logits: vec![T::zero(); spec.num_classes],
            delta_hidden: vec![T::zero(); spec.hidden_dim],
        }
    }
}

/// Fills `scratch.logits` (and `scratch.hidden` for the MLP).
fn forward<T: Scalar>(spec: &ModelSpec, w: &[T], x: &[T], scratch: &mut Scratch<T>) {
    match spec.kind {
        ModelKind::LinearSoftmax => affine(w, x, &mut scratch.logits),
        ModelKind::Mlp1Hidden => {
            let split = (spec.input_dim + 1) * spec.hidden_dim;
            affine(&w[..split], x, &mut scratch.hidden);
            for h in scratch.hidden.iter_mut() {
                *h = h.tanh();
            }
            affine(&w[split..], &scratch.hidden, &mut scratch.logits);
        }
        ModelKind::ScalarQuadratic => unreachable!("quadratic model has no logits"),
    }
}

fn sample_loss_and_grad<T: Scalar>(
    spec: &ModelSpec,
    w: &[T],
    x: &[T],
    y: usize,
    scratch: &mut Scratch<T>,
    grad: Option<&mut [T]>,
) -> T {
    if spec.kind == ModelKind::ScalarQuadratic {
        let mut loss = T::zero();
        for (&wk, &xk) in w.iter().zip(x) {
            loss += (wk - xk) * (wk - xk);
        }
        if let Some(g) = grad {
            for ((gk, &wk), &xk) in g.iter_mut().zip(w).zip(x) {
                *gk += wk - xk;
            }
        }
        return T::lit(0.5) * loss;
    }
    forward(spec, w, x, scratch);
    let lse = log_sum_exp(&scratch.logits);
    let loss = lse - scratch.logits[y];
    let Some(g) = grad else { return loss };
    // logits become dL/dz = softmax - onehot
    for (k, z) in scratch.logits.iter_mut().enumerate() {
        *z = (*z - lse).exp();
        if k == y {
            *z -= T::one();
        }
    }
    match spec.kind {
        ModelKind::LinearSoftmax => accumulate_outer(g, &scratch.logits, x),
        ModelKind::Mlp1Hidden => {
            let h_dim = spec.hidden_dim;
            let split = (spec.input_dim + 1) * h_dim;
            let (g1, g2) = g.split_at_mut(split);
            accumulate_outer(g2, &scratch.logits, &scratch.hidden);
            let w2 = &w[split..];
            for (hh, dh) in scratch.delta_hidden.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (k, &dz) in scratch.logits.iter().enumerate() {
                    acc += w2[k * (h_dim + 1) + hh] * dz;
                }
                let h = scratch.hidden[hh];
                *dh = acc * (T::one() - h * h);
            }
            accumulate_outer(g1, &scratch.delta_hidden, x);
        }
        ModelKind::ScalarQuadratic => unreachable!(),
    }
    loss
}

/// Mean per-sample loss and, optionally, its gradient.
fn evaluate_batch<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    w: &ParamVector<T>,
    batch: &S,
    want_grad: bool,
) -> Result<(T, Option<ParamVector<T>>), ModelError> {
    check_inputs(spec, w, batch)?;
    let mut scratch = Scratch::new(spec);
    let mut grad = want_grad.then(|| vec![T::zero(); w.len()]);
    let mut total = T::zero();
    for j in 0..batch.len() {
        total += sample_loss_and_grad(
            spec,
            w.as_slice(),
            batch.features(j),
            batch.label(j),
            &mut scratch,
            grad.as_deref_mut(),
        );
    }
    let inv_m = T::one() / T::count(batch.len());
    let loss = total * inv_m;
    if !loss.is_finite() {
        return Err(ModelError::NonFinite("loss"));
    }
    let grad = match grad {
        Some(mut g) => {
            for v in g.iter_mut() {
                *v *= inv_m;
            }
            let g = ParamVector::from_vec(g);
            if !g.is_finite() {
                return Err(ModelError::NonFinite("gradient"));
            }
            Some(g)
        }
        None => None,
    };
    Ok((loss, grad))
}

/// Mean cross-entropy over the batch.
pub fn loss<T: Scalar, S: Samples<T> + ?Sized>(spec: &ModelSpec, w: &ParamVector<T>, batch: &S) -> Result<T, ModelError> {
    evaluate_batch(spec, w, batch, false).map(|(l, _)| l)
}

/// Analytic gradient of [`loss`].
pub fn gradient<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    w: &ParamVector<T>,
    batch: &S,
) -> Result<ParamVector<T>, ModelError> {
    loss_and_gradient(spec, w, batch).map(|(_, g)| g)
}

pub fn loss_and_gradient<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    w: &ParamVector<T>,
    batch: &S,
) -> Result<(T, ParamVector<T>), ModelError> {
    evaluate_batch(spec, w, batch, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// Central finite differences with step `h_k = h0 (1 + |w_k|)`, `h0 = 1e-6` in double precision.
pub fn finite_diff_gradient<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    w: &ParamVector<T>,
    batch: &S,
) -> Result<ParamVector<T>, ModelError> {
    check_inputs(spec, w, batch)?;
    let h0 = T::lit(1e-6).max(T::epsilon().cbrt() * T::lit(0.1));
    let mut probe = w.clone();
    let mut out = Vec::with_capacity(w.len());
    for k in 0..w.len() {
        let wk = w[k];
        let h = h0 * (T::one() + wk.abs());
        probe[k] = wk + h;
        let up = loss(spec, &probe, batch)?;
        probe[k] = wk - h;
        let down = loss(spec, &probe, batch)?;
        probe[k] = wk;
        out.push((up - down) / (h + h));
    }
    Ok(ParamVector::from_vec(out))
}

/// Predicted class (argmax of logits, ties to the lowest index) and the sample loss.
pub fn predict_one<T: Scalar>(spec: &ModelSpec, w: &ParamVector<T>, x: &[T], y: usize) -> (usize, T) {
    let mut scratch = Scratch::new(spec);
    forward(spec, w.as_slice(), x, &mut scratch);
    let lse = log_sum_exp(&scratch.logits);
    let mut best = 0;
    for (k, &z) in scratch.logits.iter().enumerate() {
        if z > scratch.logits[best] {
            best = k;
        }
    }
    (best, lse - scratch.logits[y])
}

/// Initial parameters: zeros for the linear model, Xavier-uniform weights and zero biases for the MLP.
pub fn init_params<T: Scalar>(spec: &ModelSpec, seed: u64) -> ParamVector<T> {
    let mut w = ParamVector::zeros(spec.param_count());
    if spec.kind != ModelKind::Mlp1Hidden {
        return w;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |offset: usize, fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for r in 0..fan_out {
            for c in 0..fan_in {
                w[offset + r * (fan_in + 1) + c] = T::lit(rng.random_range(-limit..limit));
            }
        }
    };
    fill(0, spec.input_dim, spec.hidden_dim);
    fill((spec.input_dim + 1) * spec.hidden_dim, spec.hidden_dim, spec.num_classes);
    w
}
