//! Experiment configuration with defaults for MNIST + linear softmax.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::FedError;
use crate::meanfield::SolverConfig;
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fedagg,
    Fedavg,
    Fedprox,
    Fedadam,
    Fedadagrad,
    Fedyogi,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fedagg => "fedagg",
            Self::Fedavg => "fedavg",
            Self::Fedprox => "fedprox",
            Self::Fedadam => "fedadam",
            Self::Fedadagrad => "fedadagrad",
            Self::Fedyogi => "fedyogi",
        }
    }
}

/// Client update rule for FedAgg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// `w <- w - eta_l phi1_l`: every client follows the mean gradient.
    #[default]
    Aggregated,
    /// `w <- w - eta_l grad F_i(w)` on the client's own mini-batches.
    Local,
}

/// Optimisation steps per local epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "StepsRepr", into = "StepsRepr")]
pub enum LocalSteps {
    /// One pass over the client's data: `ceil(D_i / batch_size)` steps.
    #[default]
    FullPass,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepsRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<StepsRepr> for LocalSteps {
    type Error = String;
    fn try_from(r: StepsRepr) -> Result<Self, String> {
        match r {
            StepsRepr::Count(0) => Err("steps_per_epoch must be >= 1 or \"full\"".into()),
            StepsRepr::Count(n) => Ok(Self::Fixed(n)),
            StepsRepr::Word(w) if w == "full" => Ok(Self::FullPass),
            StepsRepr::Word(w) => Err(format!("steps_per_epoch must be an integer or \"full\", got {w:?}")),
        }
    }
}

impl From<LocalSteps> for StepsRepr {
    fn from(s: LocalSteps) -> Self {
        match s {
            LocalSteps::FullPass => Self::Word("full".into()),
            LocalSteps::Fixed(n) => Self::Count(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX files `{train,t10k}-{images-idx3,labels-idx1}-ubyte` under `dir`
    /// (or the dataset root taken from the environment).
    Mnist {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<PathBuf>,
    },
    Synthetic {
        num_classes: usize,
        input_dim: usize,
        samples_per_class: usize,
        test_samples_per_class: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Mnist { .. } => "mnist",
            Self::Synthetic { .. } => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Iid,
    Pathological,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub scheme: SchemeName,
    pub sigma: f64,
    pub n_shards: usize,
    pub shard_size: usize,
    pub shards_per_client: usize,
    pub equal_size: bool,
    /// Defaults to the experiment seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Iid,
            sigma: 1.0,
            n_shards: 200,
            shard_size: 300,
            shards_per_client: 2,
            equal_size: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    #[default]
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelName,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelName::Linear,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "d::num_clients")]
    pub num_clients: usize,
    #[serde(default = "d::participation_ratio")]
    pub participation_ratio: f64,
    #[serde(default = "d::rounds")]
    pub rounds: usize,
    #[serde(default = "d::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "d::base_lr")]
    pub base_lr: f64,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub steps_per_epoch: LocalSteps,
    #[serde(default = "d::alpha")]
    pub alpha: f64,
    #[serde(default = "d::mu")]
    pub mu: f64,
    #[serde(default = "d::beta1")]
    pub beta1: f64,
    #[serde(default = "d::beta2")]
    pub beta2: f64,
    #[serde(default = "d::tau")]
    pub tau: f64,
    #[serde(default = "d::server_lr")]
    pub server_lr: f64,
    #[serde(default)]
    pub fedagg_update_rule: UpdateRule,
    #[serde(default)]
    pub eta_min: f64,
    #[serde(default = "d::eta_max")]
    pub eta_max: f64,
    #[serde(default = "d::epsilon")]
    pub epsilon: f64,
    #[serde(default = "d::max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-round bound diagnostics for FedAgg.
    #[serde(default = "d::diagnostics")]
    pub diagnostics: bool,
    #[serde(default = "d::eval_batch")]
    pub eval_batch: usize,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

mod d {
    pub fn num_clients() -> usize {
        100
    }
    pub fn participation_ratio() -> f64 {
        0.2
    }
    pub fn rounds() -> usize {
        30
    }
    pub fn local_epochs() -> usize {
        3
    }
    pub fn base_lr() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn alpha() -> f64 {
        0.1
    }
    pub fn mu() -> f64 {
        0.01
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.99
    }
    pub fn tau() -> f64 {
        0.001
    }
    pub fn server_lr() -> f64 {
        0.01
    }
    pub fn eta_max() -> f64 {
        1.0
    }
    pub fn epsilon() -> f64 {
        0.001
    }
    pub fn max_sweeps() -> usize {
        100
    }
    pub fn diagnostics() -> bool {
        true
    }
    pub fn eval_batch() -> usize {
        1000
    }
}

impl ExperimentConfig {
    /// A configuration with every optional field at its default.
    pub fn with_defaults(algorithm: Algorithm, dataset: DatasetConfig) -> Self {
        Self {
            algorithm,
            num_clients: d::num_clients(),
            participation_ratio: d::participation_ratio(),
            rounds: d::rounds(),
            local_epochs: d::local_epochs(),
            base_lr: d::base_lr(),
            batch_size: d::batch_size(),
            steps_per_epoch: LocalSteps::FullPass,
            alpha: d::alpha(),
            mu: d::mu(),
            beta1: d::beta1(),
            beta2: d::beta2(),
            tau: d::tau(),
            server_lr: d::server_lr(),
            fedagg_update_rule: UpdateRule::Aggregated,
            eta_min: 0.0,
            eta_max: d::eta_max(),
            epsilon: d::epsilon(),
            max_sweeps: d::max_sweeps(),
            seed: 0,
            diagnostics: d::diagnostics(),
            eval_batch: d::eval_batch(),
            dataset,
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
        }
    }

    /// Checks field invariants; errors name the offending field.
    pub fn validate(&self) -> Result<(), FedError> {
        if self.rounds == 0 {
            return Err(FedError::Config("rounds: must be >= 1".into()));
        }
        self.validate_allowing_zero_rounds()
    }

    pub(crate) fn validate_allowing_zero_rounds(&self) -> Result<(), FedError> {
        let fail = |field: &str, msg: &str| Err(FedError::Config(format!("{field}: {msg}")));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.participation_ratio > 0.0 && self.participation_ratio <= 1.0) {
            return fail("participation_ratio", "must lie in (0, 1]");
        }
        if self.num_clients == 0 {
            return fail("num_clients", "must be >= 1");
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be >= 1");
        }
        if !finite_nonneg(self.base_lr) {
            return fail("base_lr", "must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail("alpha", "must lie in (0, 1]");
        }
        if !finite_nonneg(self.mu) {
            return fail("mu", "must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return fail("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return fail("beta2", "must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau", "must be finite and > 0");
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return fail("server_lr", "must be finite and > 0");
        }
        if !(self.eta_min.is_finite() && self.eta_max.is_finite()) {
            return fail("eta_min", "bounds must be finite");
        }
        if self.eta_min > self.eta_max {
            return fail("eta_min", "must not exceed eta_max");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon", "must be finite and > 0");
        }
        if self.max_sweeps == 0 {
            return fail("max_sweeps", "must be >= 1");
        }
        if self.eval_batch == 0 {
            return fail("eval_batch", "must be >= 1");
        }
        if self.partition.scheme == SchemeName::Dirichlet && !(self.partition.sigma > 0.0 && self.partition.sigma.is_finite()) {
            return fail("partition.sigma", "must be finite and > 0");
        }
        if self.model.kind == ModelName::Mlp && self.model.hidden_dim == 0 {
            return fail("model.hidden_dim", "must be >= 1");
        }
        if let DatasetConfig::Synthetic {
            num_classes,
            input_dim,
            samples_per_class,
            test_samples_per_class,
            separation,
            ..
        } = &self.dataset
        {
            if *num_classes < 2 || *input_dim == 0 || *samples_per_class == 0 || *test_samples_per_class == 0 {
                return fail("dataset", "synthetic counts must be >= 1 and num_classes >= 2");
            }
            if !(separation.is_finite() && *separation >= 0.0) {
                return fail("dataset.separation", "must be finite and >= 0");
            }
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            epochs: self.local_epochs,
            alpha: self.alpha,
            epsilon: self.epsilon,
            max_sweeps: self.max_sweeps,
            eta_min: self.eta_min,
            eta_max: self.eta_max,
            eta_init: self.base_lr,
        }
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.model.kind {
            ModelName::Linear => ModelSpec::linear(input_dim, num_classes),
            ModelName::Mlp => ModelSpec::mlp(input_dim, self.model.hidden_dim, num_classes),
        }
    }

    pub fn partition_seed(&self) -> u64 {
        self.partition.seed.unwrap_or(self.seed)
    }
}
