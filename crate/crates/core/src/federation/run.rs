//! Global training loop.

use std::time::Instant;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig, SchemeName};
use super::local::{local_train_baseline, local_train_fedagg, BaselineOptimizer, Batching};
use super::server::{server_adaptive_update, ServerHyper, ServerState, ServerVariant};
use crate::data::{partition_dirichlet, partition_iid, partition_pathological, Dataset, Partition};
use crate::diagnostics::{
    beta_estimate, check_drift, descent_report, estimate_bounds, eta_unit_interval, objective_value, path_agreement,
    unrolled_objective, BoundReport,
};
use crate::error::{FedError, ModelError};
use crate::meanfield::{solve_round, EtaSchedule, SolverReport};
use crate::model::{gradient, init_params, loss, predict_one, ModelSpec, RowView, Samples};
use crate::param::ParamVector;
use crate::scalar::Scalar;

/// Metrics of one global round, measured after aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected_clients: Vec<usize>,
    /// Training loss over all clients' data.
    pub global_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub solver_report: Option<SolverReport>,
    pub bound_report: Option<BoundReport>,
    /// Clamped FedAgg step sizes, one row per selected client.
    pub eta: Option<Vec<Vec<f64>>>,
    pub wall_time: f64,
}

/// Completed run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput<T> {
    pub records: Vec<RoundRecord>,
    pub model: ParamVector<T>,
    pub spec: ModelSpec,
    pub partition: Partition,
}

/// Run stopped by an error; `records` holds the rounds completed before it.
#[derive(Debug)]
pub struct ExperimentAborted<T> {
    pub records: Vec<RoundRecord>,
    pub model: Option<ParamVector<T>>,
    pub error: FedError,
}

// Stream identifiers keep the seeded generators of different purposes apart.
const STREAM_SELECT: u64 = 1 << 60;
const STREAM_CLIENT: u64 = 2 << 60;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `ceil(ratio N)` distinct clients sampled uniformly, sorted ascending.
pub fn sample_clients(n_clients: usize, ratio: f64, seed: u64, round: usize) -> Vec<usize> {
    let k = ((ratio * n_clients as f64) - 1e-9).ceil().clamp(1.0, n_clients as f64) as usize;
    if k == n_clients {
        return (0..n_clients).collect();
    }
    let mut rng = stream_rng(seed, STREAM_SELECT | round as u64);
    let mut picked = rand::seq::index::sample(&mut rng, n_clients, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Data-size weighted mean `sum_i (D_i / D) w_i`, accumulated in ascending order.
///
/// Computed as `w_0 + sum_i (D_i / D)(w_i - w_0)` so identical inputs return exactly that input.
pub fn aggregate<T: Scalar>(params: &[ParamVector<T>], sizes: &[usize]) -> Result<ParamVector<T>, FedError> {
    let first = params.first().ok_or_else(|| FedError::Config("aggregate of no clients".into()))?;
    if params.len() != sizes.len() {
        return Err(FedError::Config(format!("{} parameter vectors for {} sizes", params.len(), sizes.len())));
    }
    if sizes.contains(&0) {
        return Err(FedError::Config("client data sizes must be > 0".into()));
    }
    for p in params {
        p.check_len("client parameters", first.len())?;
    }
    let total = T::count(sizes.iter().sum());
    let mut out = first.clone();
    for (p, &size) in params.iter().zip(sizes).skip(1) {
        out.axpy(T::count(size) / total, &p.sub(first));
    }
    Ok(out)
}

/// Top-1 accuracy (ties to the lowest class) and mean loss over the test set.
pub fn evaluate<T: Scalar, S: Samples<T> + ?Sized>(
    spec: &ModelSpec,
    w: &ParamVector<T>,
    testset: &S,
    eval_batch: usize,
) -> Result<(f64, f64), ModelError> {
    if testset.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = testset.len();
    let chunk = eval_batch.max(1);
    let mut correct = 0usize;
    let mut total_loss = 0f64;
    for start in (0..n).step_by(chunk) {
        let rows: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let view = RowView::new(testset, &rows);
        // validates dimensions and labels once per chunk
        total_loss += loss(spec, w, &view)?.as_f64() * rows.len() as f64;
        for j in 0..view.len() {
            let (pred, _) = predict_one(spec, w, view.features(j), view.label(j));
            correct += usize::from(pred == view.label(j));
        }
    }
    Ok((correct as f64 / n as f64, total_loss / n as f64))
}

/// Builds the configured partition of the training set.
pub fn build_partition<T: Scalar>(config: &ExperimentConfig, train: &Dataset<T>) -> Result<Partition, FedError> {
    let p = &config.partition;
    let seed = config.partition_seed();
    let n = config.num_clients;
    Ok(match p.scheme {
        SchemeName::Iid => partition_iid(train, n, seed)?,
        SchemeName::Pathological => {
            partition_pathological(train, p.n_shards, p.shard_size, p.shards_per_client, n, seed)?
        }
        SchemeName::Dirichlet => partition_dirichlet(train, p.sigma, n, p.equal_size, seed)?,
    })
}

struct Context<'a, T> {
    config: &'a ExperimentConfig,
    spec: ModelSpec,
    train: &'a Dataset<T>,
    test: &'a Dataset<T>,
    partition: Partition,
    union_rows: Vec<usize>,
    batching: Batching,
    beta: f64,
}

impl<T: Scalar> Context<'_, T> {
    fn global_view(&self) -> RowView<'_, Dataset<T>> {
        RowView::new(self.train, &self.union_rows)
    }

    fn client_rng(&self, round: usize, client: usize) -> ChaCha8Rng {
        stream_rng(self.config.seed, STREAM_CLIENT | ((round as u64) << 24) | client as u64)
    }
}

/// Runs `config.rounds` rounds of federated training.
///
/// `on_round` sees every record as soon as its round completes.
pub fn run_experiment<T: Scalar>(
    config: &ExperimentConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<ExperimentOutput<T>, ExperimentAborted<T>> {
    let abort = |records: Vec<RoundRecord>, model: Option<ParamVector<T>>, error: FedError| ExperimentAborted {
        records,
        model,
        error,
    };
    let setup = || -> Result<Context<'_, T>, FedError> {
        config.validate_allowing_zero_rounds()?;
        if train.input_dim() != test.input_dim() {
            return Err(FedError::Config("train and test feature dimensions differ".into()));
        }
        let spec = config.model_spec(train.input_dim(), train.num_classes().max(test.num_classes()));
        spec.validate()?;
        let partition = build_partition(config, train)?;
        if partition.assignments.iter().any(Vec::is_empty) {
            return Err(FedError::Config("partition left a client without data".into()));
        }
        let mut union_rows: Vec<usize> = partition.assignments.concat();
        union_rows.sort_unstable();
        let batching = Batching {
            batch_size: config.batch_size,
            steps_per_epoch: config.steps_per_epoch,
        };
        let mut ctx = Context {
            config,
            spec,
            train,
            test,
            partition,
            union_rows,
            batching,
            beta: 0.0,
        };
        if config.algorithm == Algorithm::Fedagg && config.diagnostics {
            ctx.beta = beta_estimate(&spec, &ctx.global_view(), 5, config.seed).map_err(FedError::from)?.value;
        }
        Ok(ctx)
    };
    let ctx = match setup() {
        Ok(c) => c,
        Err(e) => return Err(abort(Vec::new(), None, e)),
    };
    let mut w = init_params::<T>(&ctx.spec, config.seed);
    let mut records = Vec::with_capacity(config.rounds);
    let mut server_state = ServerState::new(w.len());
    let mut loss_before: Option<f64> = None;
    for round in 0..config.rounds {
        match run_round(&ctx, round, &w, &mut server_state, &mut loss_before) {
            Ok((next, record)) => {
                on_round(&record);
                records.push(record);
                w = next;
            }
            Err(e) => return Err(abort(records, Some(w), e)),
        }
    }
    Ok(ExperimentOutput {
        records,
        model: w,
        spec: ctx.spec,
        partition: ctx.partition,
    })
}

fn run_round<T: Scalar>(
    ctx: &Context<'_, T>,
    round: usize,
    w: &ParamVector<T>,
    server_state: &mut ServerState<T>,
    loss_before: &mut Option<f64>,
) -> Result<(ParamVector<T>, RoundRecord), FedError> {
    let config = ctx.config;
    let started = Instant::now();
    let selected = sample_clients(config.num_clients, config.participation_ratio, config.seed, round);
    let views: Vec<RowView<'_, Dataset<T>>> = selected.iter().map(|&i| ctx.partition.client(ctx.train, i)).collect();
    let sizes: Vec<usize> = views.iter().map(|v| v.len()).collect();
    let base_lr = T::lit(config.base_lr);

    let (next, solution) = match config.algorithm {
        Algorithm::Fedagg => {
            let solution = solve_round(w, &views, &ctx.spec, &config.solver_config())?;
            debug!("round {round}: solver {:?}", solution.report);
            let outputs = views
                .par_iter()
                .enumerate()
                .map(|(k, view)| {
                    local_train_fedagg(
                        view,
                        w,
                        solution.eta.row(k),
                        config.fedagg_update_rule,
                        &solution.schedule.phi1,
                        &ctx.spec,
                        &ctx.batching,
                        ctx.client_rng(round, selected[k]),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            (aggregate(&outputs, &sizes)?, Some(solution))
        }
        Algorithm::Fedavg | Algorithm::Fedprox | Algorithm::Fedadam | Algorithm::Fedadagrad | Algorithm::Fedyogi => {
            let optimizer = if config.algorithm == Algorithm::Fedprox {
                BaselineOptimizer::FedProx { mu: config.mu }
            } else {
                BaselineOptimizer::FedAvg
            };
            let outputs = views
                .par_iter()
                .enumerate()
                .map(|(k, view)| {
                    local_train_baseline(
                        view,
                        w,
                        optimizer,
                        base_lr,
                        config.local_epochs,
                        &ctx.spec,
                        &ctx.batching,
                        ctx.client_rng(round, selected[k]),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let averaged = aggregate(&outputs, &sizes)?;
            let variant = match config.algorithm {
                Algorithm::Fedadam => Some(ServerVariant::Adam),
                Algorithm::Fedadagrad => Some(ServerVariant::Adagrad),
                Algorithm::Fedyogi => Some(ServerVariant::Yogi),
                _ => None,
            };
            let next = match variant {
                Some(variant) => {
                    let hyper = ServerHyper {
                        lr: config.server_lr,
                        beta1: config.beta1,
                        beta2: config.beta2,
                        tau: config.tau,
                    };
                    server_adaptive_update(w, &w.sub(&averaged), server_state, variant, &hyper)?
                }
                None => averaged,
            };
            (next, None)
        }
    };

    if !next.is_finite() {
        return Err(FedError::Divergence(format!("global parameters non-finite after round {round}")));
    }
    let global_loss = loss(&ctx.spec, &next, &ctx.global_view())
        .map_err(|e| FedError::Divergence(format!("global loss after round {round}: {e}")))?
        .as_f64();
    let before = loss_before.replace(global_loss);
    let mut solver_report = None;
    let mut bound_report = None;
    let mut eta_rows = None;
    if let Some(solution) = solution {
        eta_rows = Some(
            (0..solution.eta.n_clients())
                .map(|i| solution.eta.row(i).iter().map(|v| v.as_f64()).collect())
                .collect(),
        );
        if config.diagnostics {
            let before = match before {
                Some(l) => l,
                None => loss(&ctx.spec, w, &ctx.global_view())?.as_f64(),
            };
            let grad_norm = gradient(&ctx.spec, w, &ctx.global_view())?.norm().as_f64();
            let estimates = estimate_bounds(&solution.trajectories, &solution.eta, &solution.schedule, ctx.beta);
            let drift = check_drift(&solution.trajectories, &estimates, config.local_epochs);
            let (eta_violations, raw_eta_unit_fraction) = eta_unit_interval(&solution.eta_raw);
            let constant = EtaSchedule::constant(sizes.len(), config.local_epochs, base_lr);
            bound_report = Some(BoundReport {
                estimates,
                eta_in_unit_interval: eta_violations.is_empty(),
                eta_violations,
                raw_eta_unit_fraction,
                drift_bound_satisfied: drift.all_ok(),
                drift_worst_ratio: drift.worst_ratio,
                drift_violations: drift.violations,
                descent: Some(descent_report(
                    before,
                    global_loss,
                    grad_norm,
                    &estimates,
                    config.local_epochs,
                    sizes.len(),
                )),
                objective_value: objective_value(
                    &solution.trajectories,
                    &solution.eta,
                    &solution.schedule.phi2,
                    config.alpha,
                ),
                constant_rate_objective: unrolled_objective(w, &constant, &solution.schedule, config.alpha),
                path_agreement: path_agreement(&solution, config.alpha)?,
            });
        }
        solver_report = Some(solution.report);
    }
    let (test_accuracy, test_loss) = evaluate(&ctx.spec, &next, ctx.test, config.eval_batch)?;
    let record = RoundRecord {
        round,
        selected_clients: selected,
        global_loss,
        test_accuracy,
        test_loss,
        solver_report,
        bound_report,
        eta: eta_rows,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((next, record))
}
