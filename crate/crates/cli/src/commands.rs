//! The runner's sub-commands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use fedagg_core::data::{heterogeneity, label_histograms, Dataset, HeterogeneityReport};
use fedagg_core::diagnostics::descent_rhs;
use fedagg_core::federation::{build_partition, run_experiment, Algorithm, ExperimentConfig, RoundRecord};
use log::info;

use crate::checkpoint::write_checkpoint;
use crate::config::{load_datasets, parse_config, parse_config_str, to_toml_string};
use crate::error::CliError;
use crate::manifest::{config_hash, run_id, RunManifest, RunStatus};
use crate::metrics::{read_metrics, MetricsRow, MetricsWriter, RunTags};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub records: Vec<RoundRecord>,
}

impl RunSummary {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_accuracy)
    }
}

/// Loads the configuration and its data, then runs it into `out_dir/<run_id>`.
pub fn run(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<RunSummary, CliError> {
    let mut config = parse_config(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let (train, test) = load_datasets::<f64>(&config)?;
    run_with_data(&config, &train, &test, out_dir)
}

/// Runs an already-loaded experiment and writes manifest, metrics, diagnostics and checkpoint.
pub fn run_with_data(
    config: &ExperimentConfig,
    train: &Dataset<f64>,
    test: &Dataset<f64>,
    out_dir: &Path,
) -> Result<RunSummary, CliError> {
    config.validate()?;
    let config_text = to_toml_string(config)?;
    let hash = config_hash(&config_text);
    let id = run_id(config.algorithm.name(), &hash);
    let run_dir = out_dir.join(&id);
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.display(), e))?;
    if let Err(e) = std::fs::create_dir(&run_dir) {
        return Err(if e.kind() == std::io::ErrorKind::AlreadyExists {
            CliError::Collision(run_dir.display().to_string())
        } else {
            CliError::io(run_dir.display(), e)
        });
    }
    let mut manifest = RunManifest {
        run_id: id.clone(),
        config_hash: hash,
        config: config_text,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        start_time: Utc::now().to_rfc3339(),
        end_time: None,
        status: RunStatus::Running,
    };
    manifest.write(&run_dir.join(MANIFEST_FILE))?;

    let tags = RunTags {
        run_id: id.clone(),
        algorithm: config.algorithm.name().to_string(),
        dataset: config.dataset.tag().to_string(),
        distribution: build_partition(config, train)?.scheme.tag(),
    };
    let mut metrics = MetricsWriter::create(&run_dir.join(METRICS_FILE))?;
    let diag_path = run_dir.join(DIAGNOSTICS_FILE);
    let mut diagnostics =
        BufWriter::new(File::create(&diag_path).map_err(|e| CliError::io(diag_path.display(), e))?);
    let mut write_error: Option<CliError> = None;
    let outcome = run_experiment(config, train, test, |record| {
        if write_error.is_some() {
            return;
        }
        let written = metrics.append(&MetricsRow::from_record(&tags, record)).and_then(|_| {
            let line = serde_json::to_string(record).map_err(|e| CliError::io("diagnostics", e))?;
            writeln!(diagnostics, "{line}")
                .and_then(|_| diagnostics.flush())
                .map_err(|e| CliError::io(diag_path.display(), e))
        });
        if let Err(e) = written {
            write_error = Some(e);
        }
        info!("round {} accuracy {:.4}", record.round, record.test_accuracy);
    });

    let finish = |manifest: &mut RunManifest, status: RunStatus| -> Result<(), CliError> {
        manifest.status = status;
        manifest.end_time = Some(Utc::now().to_rfc3339());
        manifest.write(&run_dir.join(MANIFEST_FILE))
    };
    match (outcome, write_error) {
        (Ok(output), None) => {
            write_checkpoint(&run_dir.join(CHECKPOINT_FILE), &output.spec, &output.model)?;
            finish(&mut manifest, RunStatus::Completed)?;
            Ok(RunSummary {
                run_id: id,
                run_dir,
                records: output.records,
            })
        }
        (_, Some(e)) => {
            finish(&mut manifest, RunStatus::Aborted(e.to_string()))?;
            Err(e)
        }
        (Err(aborted), None) => {
            let error = CliError::from(aborted.error);
            finish(&mut manifest, RunStatus::Aborted(error.to_string()))?;
            Err(error)
        }
    }
}

/// One compared run.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub run_id: String,
    pub algorithm: String,
    pub final_accuracy: f64,
    /// Final accuracy minus that of the first run.
    pub delta_vs_first: f64,
}

/// Writes `accuracy_series.csv`, `loss_series.csv` (one column per run, one row
/// per round) and `summary.csv` into `out_dir`.
pub fn compare(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<CompareRow>, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Config("compare needs at least one run".into()));
    }
    let mut runs = Vec::new();
    for dir in run_dirs {
        let manifest = RunManifest::read(&dir.join(MANIFEST_FILE))?;
        if manifest.status != RunStatus::Completed {
            return Err(CliError::Config(format!("run {} did not complete", manifest.run_id)));
        }
        let rows = read_metrics(&dir.join(METRICS_FILE))?;
        if rows.is_empty() {
            return Err(CliError::Config(format!("run {} has no metrics rows", manifest.run_id)));
        }
        runs.push((manifest.run_id, rows));
    }
    let tag = |rows: &[MetricsRow]| (rows[0].dataset.clone(), rows[0].distribution.clone());
    let reference = tag(&runs[0].1);
    for (id, rows) in &runs[1..] {
        if tag(rows) != reference {
            return Err(CliError::Config(format!(
                "run {id} uses {:?}, expected {:?}",
                tag(rows),
                reference
            )));
        }
    }
    let mut names: Vec<String> = Vec::new();
    for (id, _) in &runs {
        let mut name = id.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{id}#{k}");
            k += 1;
        }
        names.push(name);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.display(), e))?;
    let series = |file: &str, pick: fn(&MetricsRow) -> f64| -> Result<(), CliError> {
        let path = out_dir.join(file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(path.display(), e))?;
        let mut header = vec!["round".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header).map_err(|e| CliError::io(path.display(), e))?;
        let mut by_round: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (k, (_, rows)) in runs.iter().enumerate() {
            for r in rows {
                by_round.entry(r.round).or_insert_with(|| vec![String::new(); runs.len()])[k] = pick(r).to_string();
            }
        }
        for (round, values) in by_round {
            let mut record = vec![round.to_string()];
            record.extend(values);
            w.write_record(&record).map_err(|e| CliError::io(path.display(), e))?;
        }
        w.flush().map_err(|e| CliError::io(path.display(), e))
    };
    series("accuracy_series.csv", |r| r.accuracy)?;
    series("loss_series.csv", |r| r.loss)?;

    let first = runs[0].1.last().expect("non-empty").accuracy;
    let summary: Vec<CompareRow> = runs
        .iter()
        .map(|(id, rows)| {
            let last = rows.last().expect("non-empty");
            CompareRow {
                run_id: id.clone(),
                algorithm: last.algorithm.clone(),
                final_accuracy: last.accuracy,
                delta_vs_first: last.accuracy - first,
            }
        })
        .collect();
    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(path.display(), e))?;
    w.write_record(["run_id", "algorithm", "final_accuracy", "delta_vs_first"])
        .map_err(|e| CliError::io(path.display(), e))?;
    for row in &summary {
        w.write_record([
            row.run_id.clone(),
            row.algorithm.clone(),
            row.final_accuracy.to_string(),
            row.delta_vs_first.to_string(),
        ])
        .map_err(|e| CliError::io(path.display(), e))?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct PartitionSummary {
    pub sizes: Vec<usize>,
    /// Client x class counts.
    pub histograms: Vec<Vec<usize>>,
    pub report: HeterogeneityReport,
}

/// Partition statistics plus a `client,size,class_0..` heat-map CSV at `heatmap`.
pub fn inspect_partition(config_path: &Path, heatmap: &Path) -> Result<PartitionSummary, CliError> {
    let config = parse_config(config_path)?;
    let (train, _) = load_datasets::<f64>(&config)?;
    inspect_partition_with_data(&config, &train, heatmap)
}

pub fn inspect_partition_with_data(
    config: &ExperimentConfig,
    train: &Dataset<f64>,
    heatmap: &Path,
) -> Result<PartitionSummary, CliError> {
    let partition = build_partition(config, train)?;
    let histograms = label_histograms(&partition, train);
    let report = heterogeneity(&partition, train)?;
    let mut w = csv::Writer::from_path(heatmap).map_err(|e| CliError::io(heatmap.display(), e))?;
    let mut header = vec!["client".to_string(), "size".to_string()];
    header.extend((0..train.num_classes()).map(|c| format!("class_{c}")));
    w.write_record(&header).map_err(|e| CliError::io(heatmap.display(), e))?;
    for (i, h) in histograms.iter().enumerate() {
        let mut record = vec![i.to_string(), h.iter().sum::<usize>().to_string()];
        record.extend(h.iter().map(usize::to_string));
        w.write_record(&record).map_err(|e| CliError::io(heatmap.display(), e))?;
    }
    w.flush().map_err(|e| CliError::io(heatmap.display(), e))?;
    Ok(PartitionSummary {
        sizes: partition.sizes(),
        histograms,
        report,
    })
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub rounds_checked: usize,
    pub failures: Vec<String>,
    /// Rounds whose loss change stayed at or below the descent bound.
    pub descent_holds: usize,
    pub descent_total: usize,
    pub clamp_events: usize,
}

/// Re-checks the diagnostics stream of a finished run.
pub fn verify_bounds(run_dir: &Path) -> Result<VerifyReport, CliError> {
    let manifest = RunManifest::read(&run_dir.join(MANIFEST_FILE))?;
    let config = parse_config_str(&manifest.config)?;
    let path = run_dir.join(DIAGNOSTICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))?;
    let mut report = VerifyReport::default();
    for (line_no, line) in text.lines().enumerate() {
        let record: RoundRecord = serde_json::from_str(line).map_err(|e| CliError::io(format!("{}:{}", path.display(), line_no + 1), e))?;
        report.rounds_checked += 1;
        check_record(&config, &record, &mut report);
    }
    Ok(report)
}

fn check_record(config: &ExperimentConfig, record: &RoundRecord, report: &mut VerifyReport) {
    let t = record.round;
    let mut fail = |m: String| report.failures.push(format!("round {t}: {m}"));
    if !(0.0..=1.0).contains(&record.test_accuracy) || !record.global_loss.is_finite() {
        fail("accuracy outside [0,1] or non-finite loss".into());
    }
    if config.algorithm != Algorithm::Fedagg {
        return;
    }
    let Some(solver) = &record.solver_report else {
        fail("missing solver report".into());
        return;
    };
    if !solver.converged || solver.residual_phi1 > config.epsilon || solver.residual_phi2 > config.epsilon {
        fail(format!(
            "solver residuals {:.3e}/{:.3e} above epsilon",
            solver.residual_phi1, solver.residual_phi2
        ));
    }
    let clamp_events = solver.clamp_events.len();
    if let Some(eta) = &record.eta {
        if eta.iter().flatten().any(|&v| v < config.eta_min || v > config.eta_max) {
            fail("step size outside configured bounds".into());
        }
    }
    let Some(bounds) = &record.bound_report else {
        report.clamp_events += clamp_events;
        return;
    };
    if !bounds.drift_bound_satisfied || !bounds.drift_violations.is_empty() || bounds.drift_worst_ratio > 1.0 + 1e-12 {
        fail(format!("drift bound violated (worst ratio {})", bounds.drift_worst_ratio));
    }
    let pa = &bounds.path_agreement;
    if pa.max_backward_vs_costate > 1e-10 || pa.max_backward_vs_solver > 1e-10 {
        fail(format!(
            "step-size routes disagree ({:.3e}, {:.3e})",
            pa.max_backward_vs_costate, pa.max_backward_vs_solver
        ));
    }
    if pa.max_terminal_gap > 1e-12 {
        fail(format!("last-epoch closed form off by {:.3e}", pa.max_terminal_gap));
    }
    if clamp_events == 0 && bounds.objective_value > bounds.constant_rate_objective * (1.0 + 1e-12) + 1e-300 {
        fail("solver schedule objective exceeds the constant-rate objective".into());
    }
    if let Some(descent) = &bounds.descent {
        let rhs = descent_rhs(&bounds.estimates, descent.grad_norm, config.local_epochs, record.selected_clients.len());
        if rhs.is_finite() && (rhs - descent.rhs).abs() > 1e-9 * rhs.abs().max(1.0) {
            fail(format!("stored descent bound {} does not match recomputed {rhs}", descent.rhs));
        }
        report.descent_total += 1;
        if descent.lhs <= descent.rhs {
            report.descent_holds += 1;
        }
    }
    report.clamp_events += clamp_events;
}

