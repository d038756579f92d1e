use std::path::{Path, PathBuf};

use clap::Args;
use qdlag::admm::FitResult;
use qdlag::selection::fit_estimator;

use crate::args::{ModelArgs, TuningArgs};
use crate::data_io::{csv_writer, fmt_f64, write_json};
use crate::document::{DocHeader, ResultDocument};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// result document [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of per-iteration objective and residuals
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// write the result even if the solver stopped at its iteration cap
    #[arg(long)]
    pub allow_nonconverged: bool,
}

pub fn header<'a>(command: &'a str, model: &ModelArgs) -> DocHeader<'a> {
    DocHeader {
        command,
        estimator: model.estimator,
        tau: model.tau,
        intercept: !model.no_intercept,
        seed: model.seed,
        solver: model.solver.settings(),
    }
}

pub fn write_trace(path: &Path, fit: &FitResult) -> CliResult<()> {
    let mut wtr = csv_writer(path)?;
    let io = |e| CliError::io(path, e);
    wtr.write_record(["iter", "objective", "primal_resid", "dual_resid"])
        .map_err(io)?;
    for e in &fit.trace {
        wtr.write_record([
            e.iter.to_string(),
            fmt_f64(e.objective),
            fmt_f64(e.primal_resid),
            fmt_f64(e.dual_resid),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

pub fn ensure_converged(fit: &FitResult, allow: bool) -> CliResult<()> {
    if fit.converged || allow {
        return Ok(());
    }
    Err(CliError::NonConverged(format!(
        "solver did not converge after {} iterations (primal {:.3e}, dual {:.3e}); \
         raise --max-iter or pass --allow-nonconverged",
        fit.iterations, fit.state.primal_resid, fit.state.dual_resid
    )))
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let tau = args.model.tau()?;
    let cell = args.tuning.cell(args.model.estimator)?;
    let data = args.model.load(&args.model.data)?;
    let config = args.model.solver.settings().descent_config(args.model.seed);
    let fit = fit_estimator(
        &data,
        tau,
        args.model.estimator.estimator(),
        cell.0,
        cell.1,
        &config,
        None,
    )?;
    if let Some(path) = &args.trace {
        write_trace(path, &fit)?;
    }
    ensure_converged(&fit, args.allow_nonconverged)?;
    let doc = ResultDocument::new(header("fit", &args.model), cell, &fit);
    write_json(args.out.as_deref(), &doc)
}
