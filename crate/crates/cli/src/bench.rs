//! Simulation benchmark: estimation error of each estimator over replicated
//! synthetic datasets, tuned on an independent validation set of equal size.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use qdlag::bootstrap::empirical_quantile;
use qdlag::selection::{select_holdout, TuningGrid};
use qdlag::sim::{default_modes, estimation_error, gen_dataset, ErrorLaw, Model, SimConfig};
use qdlag::{QuantileLevel, RegressionData};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::SolverArgs;
use crate::data_io::{csv_writer, fmt_f64};
use crate::document::{EstimatorKind, SolverSettings};
use crate::error::{CliError, CliResult};
use crate::simulate::{ErrorArg, ModelArg};

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "A,B,C")]
    pub models: Vec<ModelArg>,
    #[arg(long, value_delimiter = ',', default_value = "750")]
    pub n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub snr_list: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "uni,concave,ridge,en"
    )]
    pub estimators: Vec<EstimatorKind>,
    #[arg(long, value_enum, default_value = "normal")]
    pub error: ErrorArg,
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long, default_value_t = 30)]
    pub t: usize,
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    #[command(flatten)]
    pub grids: GridArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// long-format results CSV
    #[arg(long)]
    pub out: PathBuf,
    /// per-cell means CSV
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// leave runtime_seconds empty so that outputs are byte-reproducible
    #[arg(long)]
    pub no_timing: bool,
}

/// Tuning grids. Weights measured in units of the response (`λ2` and the
/// ridge/elastic-net `λ`) are multiplied by `1/s`, where `s` is the mean
/// absolute deviation of the training response about its τ-quantile.
#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
    pub bench_l1: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "3,10,30,100")]
    pub bench_l2: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,1,3,10")]
    pub bench_lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1")]
    pub bench_alpha: Vec<f64>,
}

impl Default for GridArgs {
    fn default() -> Self {
        GridArgs {
            bench_l1: vec![0.01, 0.1, 1.0],
            bench_l2: vec![3.0, 10.0, 30.0, 100.0],
            bench_lambda: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            bench_alpha: vec![0.5, 1.0],
        }
    }
}

impl GridArgs {
    pub fn grid(
        &self,
        kind: EstimatorKind,
        train: &RegressionData,
        tau: QuantileLevel,
    ) -> qdlag::Result<TuningGrid> {
        let inv = 1.0 / response_scale(train, tau);
        let scaled = |v: &[f64]| v.iter().map(|x| x * inv).collect::<Vec<_>>();
        match kind {
            EstimatorKind::Uni | EstimatorKind::Concave => {
                TuningGrid::new(self.bench_l1.clone(), scaled(&self.bench_l2))
            }
            EstimatorKind::En => {
                TuningGrid::elastic_net(scaled(&self.bench_lambda), self.bench_alpha.clone())
            }
            EstimatorKind::Ridge => TuningGrid::elastic_net(scaled(&self.bench_lambda), vec![0.0]),
        }
    }
}

/// Mean absolute deviation of `y` about its τ-quantile.
pub fn response_scale(data: &RegressionData, tau: QuantileLevel) -> f64 {
    let mut y = data.response().to_vec();
    y.sort_by(f64::total_cmp);
    let q = empirical_quantile(&y, tau.value());
    let s = y.iter().map(|v| (v - q).abs()).sum::<f64>() / y.len() as f64;
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub models: Vec<Model>,
    pub ns: Vec<usize>,
    pub snrs: Vec<f64>,
    pub reps: usize,
    pub estimators: Vec<EstimatorKind>,
    pub error: ErrorLaw,
    pub tau: QuantileLevel,
    pub seed: u64,
    pub k: usize,
    pub t: usize,
    pub p: usize,
    pub grids: GridArgs,
    pub solver: SolverSettings,
}

impl BenchArgs {
    pub fn spec(&self) -> CliResult<BenchSpec> {
        Ok(BenchSpec {
            models: self.models.iter().map(|&m| m.into()).collect(),
            ns: self.n_list.clone(),
            snrs: self.snr_list.clone(),
            reps: self.reps,
            estimators: self.estimators.clone(),
            error: self.error.into(),
            tau: QuantileLevel::new(self.tau)?,
            seed: self.seed,
            k: self.k,
            t: self.t,
            p: self.p,
            grids: self.grids.clone(),
            solver: self.solver.settings(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub model: Model,
    pub n: usize,
    pub snr: f64,
    pub error: ErrorLaw,
    pub estimator: EstimatorKind,
    pub rep: usize,
    /// `NaN` when the run failed
    pub estimation_error: f64,
    pub runtime_seconds: f64,
    pub tuning: Option<(f64, f64)>,
    pub failure: Option<String>,
}

fn sim_config(spec: &BenchSpec, model: Model, n: usize, snr: f64, replicate: u64) -> SimConfig {
    SimConfig {
        n,
        k: spec.k,
        t: spec.t,
        p: spec.p,
        model,
        error: spec.error,
        snr,
        tau: spec.tau,
        modes: default_modes(spec.k, spec.t),
        seed: spec.seed,
        replicate,
    }
}

fn run_one(
    spec: &BenchSpec,
    model: Model,
    n: usize,
    snr: f64,
    rep: usize,
    kind: EstimatorKind,
) -> BenchRow {
    let start = Instant::now();
    let outcome = (|| -> CliResult<(f64, (f64, f64))> {
        let train = gen_dataset(&sim_config(spec, model, n, snr, 2 * rep as u64))?;
        let valid = gen_dataset(&sim_config(spec, model, n, snr, 2 * rep as u64 + 1))?;
        let train_data = train.fitting_data();
        let grid = spec.grids.grid(kind, &train_data, spec.tau)?;
        let config = spec.solver.descent_config(spec.seed);
        let sel = select_holdout(
            &train_data,
            &valid.fitting_data(),
            spec.tau,
            &grid,
            kind.estimator(),
            &config,
        )?;
        if !sel.refit.converged {
            return Err(CliError::NonConverged(
                "refit at the selected tuning did not converge".into(),
            ));
        }
        Ok((
            estimation_error(&sel.refit.beta, &train.truth.beta_star)?,
            sel.best,
        ))
    })();
    let runtime = start.elapsed().as_secs_f64();
    let (err, tuning, failure) = match outcome {
        Ok((e, cell)) => (e, Some(cell), None),
        Err(e) => (f64::NAN, None, Some(e.to_string())),
    };
    BenchRow {
        model,
        n,
        snr,
        error: spec.error,
        estimator: kind,
        rep,
        estimation_error: err,
        runtime_seconds: runtime,
        tuning,
        failure,
    }
}

/// All rows in `(model, n, snr, rep, estimator)` order; tasks run in
/// parallel, and every row depends only on the seed.
pub fn run_bench(spec: &BenchSpec) -> Vec<BenchRow> {
    let mut tasks = Vec::new();
    for &model in &spec.models {
        for &n in &spec.ns {
            for &snr in &spec.snrs {
                for rep in 0..spec.reps {
                    for &kind in &spec.estimators {
                        tasks.push((model, n, snr, rep, kind));
                    }
                }
            }
        }
    }
    tasks
        .into_par_iter()
        .map(|(model, n, snr, rep, kind)| run_one(spec, model, n, snr, rep, kind))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: Model,
    pub n: usize,
    pub snr: f64,
    pub error: ErrorLaw,
    pub estimator: EstimatorKind,
    pub reps_ok: usize,
    pub mean_error: f64,
    /// standard error of the mean
    pub se_error: f64,
    pub mean_runtime: f64,
}

/// Means per `(model, n, snr, estimator)` over the successful replicates,
/// in first-appearance order.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let same = |s: &SummaryRow, r: &BenchRow| {
        s.model == r.model
            && s.n == r.n
            && s.snr == r.snr
            && s.error == r.error
            && s.estimator == r.estimator
    };
    for r in rows {
        if out.iter().any(|s| same(s, r)) {
            continue;
        }
        let group: Vec<&BenchRow> = rows
            .iter()
            .filter(|x| x.failure.is_none())
            .filter(|x| {
                x.model == r.model
                    && x.n == r.n
                    && x.snr == r.snr
                    && x.error == r.error
                    && x.estimator == r.estimator
            })
            .collect();
        let m = group.len();
        let mean =
            |f: &dyn Fn(&BenchRow) -> f64| group.iter().map(|x| f(x)).sum::<f64>() / m as f64;
        let mean_error = mean(&|x| x.estimation_error);
        let se_error = if m > 1 {
            let var = group
                .iter()
                .map(|x| (x.estimation_error - mean_error).powi(2))
                .sum::<f64>()
                / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            f64::NAN
        };
        out.push(SummaryRow {
            model: r.model,
            n: r.n,
            snr: r.snr,
            error: r.error,
            estimator: r.estimator,
            reps_ok: m,
            mean_error,
            se_error,
            mean_runtime: mean(&|x| x.runtime_seconds),
        });
    }
    out
}

fn model_name(m: Model) -> &'static str {
    match m {
        Model::A => "A",
        Model::B => "B",
        Model::C => "C",
    }
}

fn error_name(e: ErrorLaw) -> &'static str {
    match e {
        ErrorLaw::Normal => "normal",
        ErrorLaw::StudentT4 => "t4",
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        fmt_f64(v)
    }
}

pub fn write_rows(path: &Path, rows: &[BenchRow], timing: bool) -> CliResult<()> {
    let mut wtr = csv_writer(path)?;
    let io = |e| CliError::io(path, e);
    wtr.write_record([
        "model",
        "n",
        "snr",
        "error",
        "estimator",
        "rep",
        "estimation_error",
        "runtime_seconds",
        "tuning_a",
        "tuning_b",
        "failure",
    ])
    .map_err(io)?;
    for r in rows {
        let (a, b) = r.tuning.unwrap_or((f64::NAN, f64::NAN));
        wtr.write_record([
            model_name(r.model).to_string(),
            r.n.to_string(),
            fmt_f64(r.snr),
            error_name(r.error).to_string(),
            r.estimator.name().to_string(),
            r.rep.to_string(),
            num(r.estimation_error),
            if timing {
                fmt_f64(r.runtime_seconds)
            } else {
                String::new()
            },
            num(a),
            num(b),
            r.failure.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow], timing: bool) -> CliResult<()> {
    let mut wtr = csv_writer(path)?;
    let io = |e| CliError::io(path, e);
    wtr.write_record([
        "model",
        "n",
        "snr",
        "error",
        "estimator",
        "reps_ok",
        "mean_error",
        "se_error",
        "mean_runtime",
    ])
    .map_err(io)?;
    for s in rows {
        wtr.write_record([
            model_name(s.model).to_string(),
            s.n.to_string(),
            fmt_f64(s.snr),
            error_name(s.error).to_string(),
            s.estimator.name().to_string(),
            s.reps_ok.to_string(),
            num(s.mean_error),
            num(s.se_error),
            if timing {
                num(s.mean_runtime)
            } else {
                String::new()
            },
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    let spec = args.spec()?;
    let rows = run_bench(&spec);
    write_rows(&args.out, &rows, !args.no_timing)?;
    if let Some(path) = &args.summary {
        write_summary(path, &summarize(&rows), !args.no_timing)?;
    }
    Ok(())
}
