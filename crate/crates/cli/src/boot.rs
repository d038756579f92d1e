use std::path::{Path, PathBuf};

use clap::Args;
use qdlag::bootstrap::{
    bootstrap, critical_windows, intervals, BootstrapConfig, ConfidenceBand, CriticalWindowReport,
};
use qdlag::selection::{fit_estimator, SelectionResult};
use qdlag::{LagCoefficients, QuantileLevel};

use crate::args::load_data;
use crate::cv::{build_grid, DEFAULT_FOLDS};
use crate::data_io::{csv_writer, fmt_f64, write_json};
use crate::document::{BootstrapDoc, ResultDocument};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    /// the CSV the cv result was computed on
    #[arg(long)]
    pub data: PathBuf,
    /// result document written by `cv` (or `fit`); supplies estimator,
    /// tuning, tau and solver settings
    #[arg(long)]
    pub cv: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// rerun cross-validation in every replicate instead of reusing the tuning
    #[arg(long)]
    pub full_cv: bool,
    /// folds of the per-replicate cross-validation [default: those of the cv run, else 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// per-(exposure, lag) band CSV
    #[arg(long)]
    pub out: PathBuf,
    /// result document with the bands attached
    #[arg(long)]
    pub doc: Option<PathBuf>,
}

pub fn write_bands(
    path: &Path,
    beta: &LagCoefficients,
    band: &ConfidenceBand,
    windows: &CriticalWindowReport,
) -> CliResult<()> {
    let mut wtr = csv_writer(path)?;
    let io = |e| CliError::io(path, e);
    wtr.write_record([
        "exposure",
        "lag",
        "estimate",
        "lower",
        "upper",
        "excludes_zero",
        "intensity",
    ])
    .map_err(io)?;
    let (k, t) = beta.dim();
    for kk in 0..k {
        for tt in 0..t {
            wtr.write_record([
                (kk + 1).to_string(),
                (tt + 1).to_string(),
                fmt_f64(beta.as_array()[[kk, tt]]),
                fmt_f64(band.lower[[kk, tt]]),
                fmt_f64(band.upper[[kk, tt]]),
                windows.excludes_zero[[kk, tt]].to_string(),
                fmt_f64(windows.intensity[[kk, tt]]),
            ])
            .map_err(io)?;
        }
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

pub fn run(args: &BootstrapArgs) -> CliResult<()> {
    let base_doc = ResultDocument::load(&args.cv)?;
    let kind = base_doc.estimator;
    let tau = QuantileLevel::new(base_doc.tau)?;
    let data = load_data(&args.data, base_doc.intercept)?;
    let config = base_doc.solver.descent_config(base_doc.seed);
    let cell = base_doc.tuning.cell();
    let (grid, score_table, best_index, folds) = match &base_doc.selection {
        Some(s) => (
            build_grid(kind, &s.grid_l1, &s.grid_l2)?,
            s.scores.to_array()?.mapv(|v| v.unwrap_or(f64::NAN)),
            s.best_index,
            s.folds,
        ),
        None => (
            build_grid(kind, &[cell.0], &[cell.1])?,
            ndarray::Array2::from_elem((1, 1), f64::NAN),
            (0, 0),
            None,
        ),
    };
    let refit = fit_estimator(&data, tau, kind.estimator(), cell.0, cell.1, &config, None)?;
    let stored = base_doc.beta.to_array()?;
    let scale = stored.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let reproduced = stored.dim() == refit.beta.dim()
        && stored
            .iter()
            .zip(refit.beta.as_array())
            .all(|(a, b)| (a - b).abs() <= 1e-9 * scale);
    if !reproduced {
        return Err(CliError::Usage(format!(
            "{} does not reproduce the fit stored in {}",
            args.data.display(),
            args.cv.display()
        )));
    }
    let base = SelectionResult {
        estimator: kind.estimator(),
        grid,
        best: cell,
        best_index,
        score_table,
        folds,
        seed: base_doc.seed,
        refit,
    };
    let boot_cfg = BootstrapConfig {
        replicates: args.replicates,
        level: args.level,
        seed: args.seed,
        reuse_tuning: !args.full_cv,
        folds: args.folds.or(folds).unwrap_or(DEFAULT_FOLDS),
    };
    let dist = bootstrap(&data, tau, &base, &boot_cfg, &config)?;
    let band = intervals(&dist, args.level)?;
    let windows = critical_windows(&band);
    write_bands(&args.out, &base.refit.beta, &band, &windows)?;
    if let Some(path) = &args.doc {
        let mut doc = base_doc.clone();
        doc.command = "bootstrap".into();
        doc.bootstrap = Some(BootstrapDoc::of(
            &dist,
            args.seed,
            !args.full_cv,
            &band,
            &windows,
        ));
        write_json(Some(path), &doc)?;
    }
    if dist.unreliable {
        return Err(CliError::Unreliable(format!(
            "{} of {} bootstrap replicates failed; the bands are unreliable",
            dist.failed, args.replicates
        )));
    }
    Ok(())
}
