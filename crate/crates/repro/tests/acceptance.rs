//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero when any criterion fails.
//!
//! MNIST is read from `$FEDAGG_DATA_DIR` or `<workspace>/data/mnist`
//! (see `scripts/fetch_mnist.sh`).

#[path = "../../core/tests/common/oracle.rs"]
#[allow(dead_code)]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use fedagg_cli::commands::{run_with_data, RunSummary, MANIFEST_FILE, METRICS_FILE};
use fedagg_cli::config::{load_datasets, parse_config_str};
use fedagg_cli::manifest::RunManifest;
use fedagg_core::data::{heterogeneity, partition_dirichlet, partition_iid, partition_pathological, Dataset};
use fedagg_core::diagnostics::path_agreement;
use fedagg_core::federation::{run_experiment, Algorithm, DatasetConfig, ExperimentConfig, SchemeName, UpdateRule};
use fedagg_core::meanfield::{solve_round, SolverConfig};
use fedagg_core::{finite_diff_gradient, gradient, init_params, Batch, F64Params, ModelSpec, ParamVector};
use oracle::QuadraticInstance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("FEDAGG_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_config(algorithm: Algorithm, scheme: SchemeName) -> ExperimentConfig {
    let mut c = ExperimentConfig::with_defaults(algorithm, DatasetConfig::Mnist { dir: Some(mnist_dir()) });
    c.partition.scheme = scheme;
    c
}

struct Mnist {
    train: Dataset<f64>,
    test: Dataset<f64>,
    scratch: TempDir,
}

impl Mnist {
    fn run(&self, config: &ExperimentConfig, subdir: &str) -> Result<RunSummary, String> {
        let started = Instant::now();
        let out = run_with_data(config, &self.train, &self.test, &self.scratch.path().join(subdir))
            .map_err(|e| e.to_string())?;
        let rule = match config.algorithm {
            Algorithm::Fedagg => format!(", {:?} rule", config.fedagg_update_rule),
            _ => String::new(),
        };
        eprintln!(
            "  ran {} ({:?}{rule}) in {:.1}s: final accuracy {:.4}",
            out.run_id,
            config.partition.scheme,
            started.elapsed().as_secs_f64(),
            out.final_accuracy().unwrap_or(f64::NAN)
        );
        Ok(out)
    }
}

/// FedAvg plus both FedAgg update rules on one partition scheme.
struct Comparison {
    fedavg: RunSummary,
    aggregated: RunSummary,
    local: RunSummary,
}

fn comparison(data: &Mnist, scheme: SchemeName) -> Result<Comparison, String> {
    let fedavg = data.run(&mnist_config(Algorithm::Fedavg, scheme), "first")?;
    let mut agg = mnist_config(Algorithm::Fedagg, scheme);
    let aggregated = data.run(&agg, "first")?;
    agg.fedagg_update_rule = UpdateRule::Local;
    let local = data.run(&agg, "first")?;
    Ok(Comparison {
        fedavg,
        aggregated,
        local,
    })
}

fn accuracy_criterion(cmp: &Result<Comparison, String>, fedavg_ref: f64, fedagg_ref: f64, tol: f64) -> Outcome {
    let cmp = match cmp {
        Ok(c) => c,
        Err(e) => return Outcome::new(false, format!("run failed: {e}")),
    };
    let pct = |s: &RunSummary| 100.0 * s.final_accuracy().unwrap_or(f64::NAN);
    let avg = pct(&cmp.fedavg);
    let avg_ok = (avg - fedavg_ref).abs() <= tol;
    let mut parts = vec![format!("fedavg {avg:.2} (ref {fedavg_ref} +/- {tol}) {}", verdict(avg_ok))];
    let mut any_rule = false;
    for (name, run) in [("aggregated", &cmp.aggregated), ("local", &cmp.local)] {
        let acc = pct(run);
        let ok = (acc - fedagg_ref).abs() <= tol && acc > avg;
        any_rule |= ok;
        parts.push(format!("fedagg[{name}] {acc:.2} (ref {fedagg_ref} +/- {tol}, > fedavg) {}", verdict(ok)));
    }
    Outcome::new(avg_ok && any_rule, parts.join("; "))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "miss"
    }
}

fn fedadam_criterion(data: &Mnist) -> Outcome {
    let c = mnist_config(Algorithm::Fedadam, SchemeName::Iid);
    match data.run(&c, "first") {
        Ok(run) => {
            let acc = 100.0 * run.final_accuracy().unwrap_or(f64::NAN);
            Outcome::new(
                (acc - 89.85).abs() <= 2.0,
                format!("fedadam {acc:.2} (ref 89.85 +/- 2.0, beta1 {}, beta2 {}, tau {})", c.beta1, c.beta2, c.tau),
            )
        }
        Err(e) => Outcome::new(false, format!("run failed: {e}")),
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> QuadraticInstance {
    let n = rng.random_range(1..=3);
    QuadraticInstance {
        targets: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        global_w: rng.random_range(-2.0..2.0),
        epochs: rng.random_range(1..=3),
        alpha: rng.random_range(0.05..0.95),
        eta_bounds: (0.0, 1.0),
    }
}

struct QuadraticResults {
    passed: usize,
    total: usize,
    worst_gap: f64,
    worst_costate: f64,
    worst_terminal: f64,
    compared: usize,
}

fn quadratic_instances() -> QuadraticResults {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut out = QuadraticResults {
        passed: 0,
        total: 50,
        worst_gap: 0.0,
        worst_costate: 0.0,
        worst_terminal: 0.0,
        compared: 0,
    };
    for _ in 0..out.total {
        let inst = random_instance(&mut rng);
        let clients: Vec<Batch<f64>> = inst
            .targets
            .iter()
            .map(|&a| Batch::new(vec![a], vec![0], 1).unwrap())
            .collect();
        let config = SolverConfig {
            epochs: inst.epochs,
            alpha: inst.alpha,
            epsilon: 1e-13,
            max_sweeps: 20_000,
            eta_min: inst.eta_bounds.0,
            eta_max: inst.eta_bounds.1,
            ..SolverConfig::default()
        };
        let w0: F64Params = ParamVector::from_vec(vec![inst.global_w]);
        let (Ok(sol), Some(fixed)) = (
            solve_round(&w0, &clients, &ModelSpec::quadratic(1), &config),
            oracle::solve(&inst, 1e-14, 200_000),
        ) else {
            out.worst_gap = f64::INFINITY;
            continue;
        };
        let mut gap = 0f64;
        for (i, row) in fixed.eta.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                gap = gap.max((sol.eta.get(i, l) - v).abs());
            }
        }
        out.worst_gap = out.worst_gap.max(gap);
        if gap <= 1e-8 {
            out.passed += 1;
        }
        if let Ok(agreement) = path_agreement(&sol, inst.alpha) {
            out.compared += agreement.compared_clients;
            out.worst_costate = out.worst_costate.max(agreement.max_backward_vs_costate);
            out.worst_terminal = out.worst_terminal.max(agreement.max_terminal_gap);
        } else {
            out.worst_costate = f64::INFINITY;
        }
    }
    out
}

fn path_agreement_criterion(runs: &[&RunSummary], quad: &QuadraticResults) -> Outcome {
    let (mut costate, mut terminal, mut compared, mut rounds) = (quad.worst_costate, quad.worst_terminal, quad.compared, 0);
    for run in runs {
        for r in &run.records {
            match &r.bound_report {
                Some(b) => {
                    costate = costate.max(b.path_agreement.max_backward_vs_costate);
                    terminal = terminal.max(b.path_agreement.max_terminal_gap);
                    compared += b.path_agreement.compared_clients;
                    rounds += 1;
                }
                None => return Outcome::new(false, format!("{} round {} has no bound report", run.run_id, r.round)),
            }
        }
    }
    Outcome::new(
        costate <= 1e-10 && terminal <= 1e-12 && compared > 0,
        format!(
            "{rounds} mnist rounds + {} quadratic instances, {compared} unclamped client paths: backward vs costate {costate:.2e} (tol 1e-10), last-epoch closed form {terminal:.2e} (tol 1e-12)",
            quad.total
        ),
    )
}

fn collapse_criterion(data: &Mnist) -> Outcome {
    let mut c = mnist_config(Algorithm::Fedagg, SchemeName::Iid);
    c.alpha = 1.0;
    c.rounds = 3;
    let out = match run_experiment(&c, &data.train, &data.test, |_| {}) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("run failed: {}", e.error)),
    };
    let eta_zero = out
        .records
        .iter()
        .all(|r| r.eta.as_ref().is_some_and(|rows| rows.iter().flatten().all(|&v| v == 0.0)));
    let initial: F64Params = init_params(&out.spec, c.seed);
    let model_same = out.model == initial;
    let first = &out.records[0];
    let metrics_same = out
        .records
        .iter()
        .all(|r| r.global_loss == first.global_loss && r.test_accuracy == first.test_accuracy);
    Outcome::new(
        eta_zero && model_same && metrics_same,
        format!(
            "alpha 1, {} rounds: all eta zero {eta_zero}, final model equals initial {model_same}, loss/accuracy constant {metrics_same}",
            c.rounds
        ),
    )
}

fn gradient_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    let draws = 200;
    for draw in 0..draws {
        let (d, k, m) = (rng.random_range(1..8), rng.random_range(2..6), rng.random_range(1..10));
        let spec = if draw % 2 == 0 {
            ModelSpec::linear(d, k)
        } else {
            ModelSpec::mlp(d, rng.random_range(1..6), k)
        };
        let features = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..m).map(|_| rng.random_range(0..k)).collect();
        let batch = Batch::new(features, labels, d).unwrap();
        let w: F64Params = ParamVector::from_vec((0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let g = gradient(&spec, &w, &batch).unwrap();
        let fd = finite_diff_gradient(&spec, &w, &batch).unwrap();
        worst = worst.max(g.distance(&fd) / g.norm().max(fd.norm()).max(1e-12));
    }
    Outcome::new(worst < 1e-5, format!("{draws} draws, worst relative error {worst:.2e} (tol 1e-5)"))
}

fn drift_criterion(runs: &[&RunSummary]) -> Outcome {
    let (mut rounds, mut worst) = (0, 0f64);
    let mut failures = Vec::new();
    for run in runs {
        for r in &run.records {
            rounds += 1;
            match &r.bound_report {
                Some(b) => {
                    worst = worst.max(b.drift_worst_ratio);
                    if !b.drift_bound_satisfied {
                        failures.push(format!("{} round {}", run.run_id, r.round));
                    }
                }
                None => failures.push(format!("{} round {} missing", run.run_id, r.round)),
            }
        }
    }
    Outcome::new(
        failures.is_empty() && rounds > 0,
        format!("{rounds} aggregated-rule rounds, worst drift ratio {worst:.4}, failing rounds {failures:?}"),
    )
}

fn heterogeneity_criterion(train: &Dataset<f64>) -> Outcome {
    let seeds = 10u64;
    let mut means = [0f64; 4];
    for seed in 0..seeds {
        let parts = [
            partition_pathological(train, 200, 300, 2, 100, seed),
            partition_dirichlet(train, 0.6, 100, true, seed),
            partition_dirichlet(train, 1.0, 100, true, seed),
            partition_iid(train, 100, seed),
        ];
        for (slot, part) in means.iter_mut().zip(parts) {
            let report = part.and_then(|p| heterogeneity(&p, train));
            match report {
                Ok(r) => *slot += r.mean_distance / seeds as f64,
                Err(e) => return Outcome::new(false, format!("partition failed: {e}")),
            }
        }
    }
    let [path, d06, d10, iid] = means;
    Outcome::new(
        path > d06 && d06 > d10 && d10 > iid && iid < 0.05,
        format!("mean over {seeds} seeds: pathological {path:.4} > dirichlet(0.6) {d06:.4} > dirichlet(1.0) {d10:.4} > iid {iid:.4} (< 0.05)"),
    )
}

fn without_wall_time(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect())
}

fn determinism_criterion(data: &Mnist, first: &[&RunSummary]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for run in first {
        let config = RunManifest::read(&run.run_dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|m| parse_config_str(&m.config).ok());
        let Some(config) = config else {
            return Outcome::new(false, format!("{}: manifest unreadable", run.run_id));
        };
        let again = match data.run(&config, "second") {
            Ok(r) => r,
            Err(e) => return Outcome::new(false, format!("repeat failed: {e}")),
        };
        let same = matches!(
            (without_wall_time(&run.run_dir.join(METRICS_FILE)), without_wall_time(&again.run_dir.join(METRICS_FILE))),
            (Ok(a), Ok(b)) if a == b && a.len() > 1
        );
        ok &= same;
        parts.push(format!("{} identical {same}", run.run_id));
    }
    Outcome::new(ok, parts.join("; "))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(u32, String, Outcome)> = Vec::new();
    let mut record = |id: u32, name: &str, outcome: Outcome| {
        let tag = if outcome.pass { "[PASS]" } else { "[FAIL]" };
        println!("{tag} criterion {id:>2} {name}: {}", outcome.detail);
        results.push((id, name.to_string(), outcome));
    };

    let quad = quadratic_instances();
    record(
        4,
        "solver matches dense oracle",
        Outcome::new(
            quad.passed == quad.total,
            format!("{}/{} instances within 1e-8, worst gap {:.2e}", quad.passed, quad.total, quad.worst_gap),
        ),
    );
    record(7, "gradient vs finite differences", gradient_criterion());

    let dir = mnist_dir();
    let loaded = load_datasets::<f64>(&mnist_config(Algorithm::Fedavg, SchemeName::Iid));
    let data = match (loaded, TempDir::new()) {
        (Ok((train, test)), Ok(scratch)) => Mnist { train, test, scratch },
        (Err(e), _) => {
            let why = format!("MNIST unavailable at {} ({e}); run scripts/fetch_mnist.sh", dir.display());
            for (id, name) in [
                (1, "mnist iid accuracy"),
                (2, "mnist pathological accuracy"),
                (3, "fedadam accuracy"),
                (5, "path agreement"),
                (6, "alpha 1 collapse"),
                (8, "drift bound"),
                (9, "heterogeneity ordering"),
                (10, "determinism"),
            ] {
                record(id, name, Outcome::new(false, why.clone()));
            }
            return finish(&results, started);
        }
        (_, Err(e)) => panic!("scratch directory: {e}"),
    };

    record(9, "heterogeneity ordering", heterogeneity_criterion(&data.train));
    let iid = comparison(&data, SchemeName::Iid);
    record(1, "mnist iid accuracy", accuracy_criterion(&iid, 88.23, 90.35, 2.0));
    let path = comparison(&data, SchemeName::Pathological);
    record(2, "mnist pathological accuracy", accuracy_criterion(&path, 86.28, 89.45, 2.5));
    record(3, "fedadam accuracy", fedadam_criterion(&data));

    let fedagg_runs: Vec<&RunSummary> = [&iid, &path]
        .into_iter()
        .filter_map(|c| c.as_ref().ok())
        .flat_map(|c| [&c.aggregated, &c.local])
        .collect();
    let aggregated_runs: Vec<&RunSummary> = [&iid, &path]
        .into_iter()
        .filter_map(|c| c.as_ref().ok())
        .map(|c| &c.aggregated)
        .collect();
    let both_ran = iid.is_ok() && path.is_ok();
    let mut agreement = path_agreement_criterion(&fedagg_runs, &quad);
    agreement.pass &= both_ran;
    record(5, "path agreement", agreement);
    record(6, "alpha 1 collapse", collapse_criterion(&data));
    let mut drift = drift_criterion(&aggregated_runs);
    drift.pass &= both_ran;
    record(8, "drift bound", drift);
    let determinism = match &iid {
        Ok(c) => determinism_criterion(&data, &[&c.fedavg, &c.aggregated]),
        Err(e) => Outcome::new(false, format!("criterion 1 runs failed: {e}")),
    };
    record(10, "determinism", determinism);
    finish(&results, started)
}

fn finish(results: &[(u32, String, Outcome)], started: Instant) -> ExitCode {
    let mut sorted: Vec<_> = results.iter().collect();
    sorted.sort_by_key(|(id, _, _)| *id);
    let passed = sorted.iter().filter(|(_, _, o)| o.pass).count();
    println!("\nacceptance summary ({:.0}s):", started.elapsed().as_secs_f64());
    for (id, name, o) in &sorted {
        println!("  {:>2} {:<30} {}", id, name, if o.pass { "PASS" } else { "FAIL" });
    }
    println!("{passed}/{} criteria passed", sorted.len());
    if passed == sorted.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
