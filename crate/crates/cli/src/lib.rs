//! Command-line front end of `qdlag`: CSV ingestion, versioned JSON result
//! documents and the `fit`, `cv`, `bootstrap`, `simulate` and `bench`
//! subcommands.

pub mod args;
pub mod bench;
pub mod boot;
pub mod cv;
pub mod data_io;
pub mod document;
pub mod error;
pub mod fit;
pub mod simulate;

use clap::{Parser, Subcommand};

use crate::error::{CliResult, EXIT_OK};

const EXIT_CODES: &str = "Exit codes:
  0  success
  2  usage error, unreadable input or schema violation
  3  solver did not converge (see --allow-nonconverged)
  4  bootstrap distribution unreliable (more than 20% of replicates failed)";

#[derive(Debug, Parser)]
#[command(name = "qdlag", version, about = "Shape-constrained quantile distributed-lag regression", after_help = EXIT_CODES)]
pub struct Cli {
    /// worker threads [default: $QDLAG_THREADS, else all cores]; results do not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator at fixed tuning parameters
    Fit(fit::FitArgs),
    /// Select tuning parameters by cross-validation or a validation set
    Cv(cv::CvArgs),
    /// Wild-bootstrap confidence bands and critical windows for a cv result
    Bootstrap(boot::BootstrapArgs),
    /// Draw a synthetic dataset and its truth
    Simulate(simulate::SimulateArgs),
    /// Compare estimators over replicated synthetic datasets
    Bench(bench::BenchArgs),
}

pub fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("QDLAG_THREADS") {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().map(Some).map_err(|_| {
            error::CliError::Usage(format!(
                "QDLAG_THREADS must be a positive integer, got {v:?}"
            ))
        }),
        _ => Ok(None),
    }
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => fit::run(a),
        Command::Cv(a) => cv::run(a),
        Command::Bootstrap(a) => boot::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Bench(a) => bench::run(a),
    }
}

/// Parses flags, configures the worker pool and runs; returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return error::EXIT_USAGE;
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
