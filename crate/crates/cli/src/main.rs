use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedagg_cli::commands;
use fedagg_cli::CliError;

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  verify-bounds found a violated check
  2  invalid configuration
  3  step-size solver did not converge
  4  numeric divergence
  5  I/O or data-format error
  6  run directory already exists";

#[derive(Parser)]
#[command(name = "fedagg", version, about = "Federated training with mean-field adaptive step sizes", after_help = EXIT_CODES)]
struct Cli {
    /// Size of the worker pool (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tabulate several finished runs against each other.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Print client sizes, label histograms and heterogeneity of a partition.
    InspectPartition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "partition_heatmap.csv")]
        heatmap: PathBuf,
    },
    /// Re-check the recorded diagnostics of a finished run.
    VerifyBounds {
        #[arg(long)]
        run: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    }
    match cli.command {
        Command::Run { config, out, seed } => {
            let summary = commands::run(&config, &out, seed)?;
            println!("run {} -> {}", summary.run_id, summary.run_dir.display());
            if let Some(acc) = summary.final_accuracy() {
                println!("final test accuracy {acc:.4}");
            }
        }
        Command::Compare { runs, out } => {
            let rows = commands::compare(&runs, &out)?;
            println!("{:<32} {:<10} {:>10} {:>10}", "run", "algorithm", "accuracy", "delta");
            for r in rows {
                println!(
                    "{:<32} {:<10} {:>10.4} {:>+10.4}",
                    r.run_id, r.algorithm, r.final_accuracy, r.delta_vs_first
                );
            }
            println!("series written to {}", out.display());
        }
        Command::InspectPartition { config, heatmap } => {
            let s = commands::inspect_partition(&config, &heatmap)?;
            println!("client  size  histogram");
            for (i, (size, h)) in s.sizes.iter().zip(&s.histograms).enumerate() {
                println!("{i:>6} {size:>5}  {h:?}");
            }
            println!("mean label-marginal distance {:.4}", s.report.mean_distance);
            println!("heat map written to {}", heatmap.display());
        }
        Command::VerifyBounds { run } => {
            let report = commands::verify_bounds(&run)?;
            println!("rounds checked {}", report.rounds_checked);
            println!("clamp events {}", report.clamp_events);
            if report.descent_total > 0 {
                println!(
                    "descent bound held in {}/{} rounds ({:.1}%)",
                    report.descent_holds,
                    report.descent_total,
                    100.0 * report.descent_holds as f64 / report.descent_total as f64
                );
            }
            for f in &report.failures {
                println!("FAIL {f}");
            }
            if !report.failures.is_empty() {
                return Err(CliError::Verification(format!("{} failed checks", report.failures.len())));
            }
            println!("all checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
