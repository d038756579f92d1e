//! Versioned JSON result and truth documents.

use std::path::Path;

use ndarray::Array2;
use qdlag::admm::{AdmmConfig, FitResult};
use qdlag::bootstrap::{BootstrapDistribution, ConfidenceBand, CriticalWindowReport};
use qdlag::selection::{Estimator, SelectionResult};
use qdlag::sim::{ErrorLaw, Model, SimConfig, SimTruth};
use qdlag::unimodal::{DescentConfig, OuterStop};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RESULT_FORMAT: &str = "qdlag-result";
pub const TRUTH_FORMAT: &str = "qdlag-truth";
pub const SCHEMA_VERSION: &str = "1.0.0";
pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Row-major matrix with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T = f64> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn from_array(a: &Array2<T>) -> Self {
        Matrix {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().cloned().collect(),
        }
    }

    pub fn to_array(&self) -> CliResult<Array2<T>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone()).map_err(|_| {
            CliError::Usage(format!(
                "matrix data length {} is not {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Uni,
    Concave,
    En,
    Ridge,
}

impl EstimatorKind {
    pub fn estimator(self) -> Estimator {
        match self {
            EstimatorKind::Uni => Estimator::Unimodal,
            EstimatorKind::Concave => Estimator::Concave,
            EstimatorKind::En | EstimatorKind::Ridge => Estimator::ElasticNet,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Uni => "uni",
            EstimatorKind::Concave => "concave",
            EstimatorKind::En => "en",
            EstimatorKind::Ridge => "ridge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tuning {
    Shape { lambda1: f64, lambda2: f64 },
    ElasticNet { lambda: f64, alpha: f64 },
}

impl Tuning {
    pub fn from_cell(kind: EstimatorKind, (a, b): (f64, f64)) -> Self {
        match kind {
            EstimatorKind::Uni | EstimatorKind::Concave => Tuning::Shape {
                lambda1: a,
                lambda2: b,
            },
            EstimatorKind::En | EstimatorKind::Ridge => Tuning::ElasticNet {
                lambda: a,
                alpha: b,
            },
        }
    }

    pub fn cell(self) -> (f64, f64) {
        match self {
            Tuning::Shape { lambda1, lambda2 } => (lambda1, lambda2),
            Tuning::ElasticNet { lambda, alpha } => (lambda, alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub rho: Option<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
    pub max_outer_iter: usize,
}

impl SolverSettings {
    pub fn descent_config(&self, seed: u64) -> DescentConfig {
        DescentConfig {
            max_outer_iter: self.max_outer_iter,
            admm: AdmmConfig {
                rho: self.rho,
                eps1: self.eps1,
                eps2: self.eps2,
                max_iter: self.max_iter,
                ..AdmmConfig::default()
            },
            seed,
            ..DescentConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub primal_resid: f64,
    pub dual_resid: f64,
    pub outer_stop: Option<OuterStop>,
    pub outer_objectives: Option<Vec<f64>>,
}

impl Diagnostics {
    pub fn of(fit: &FitResult) -> Self {
        Diagnostics {
            converged: fit.converged,
            iterations: fit.iterations,
            objective: fit.objective,
            primal_resid: fit.state.primal_resid,
            dual_resid: fit.state.dual_resid,
            outer_stop: fit.descent.as_ref().map(|d| d.stop),
            outer_objectives: fit
                .descent
                .as_ref()
                .map(|d| d.outer.iter().map(|o| o.objective).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub grid_l1: Vec<f64>,
    pub grid_l2: Vec<f64>,
    /// `None` for a held-out validation set
    pub folds: Option<usize>,
    /// rows follow `grid_l1`; `null` marks cells without a converged fit
    pub scores: Matrix<Option<f64>>,
    pub best_index: (usize, usize),
}

impl SelectionDoc {
    pub fn of(sel: &SelectionResult) -> Self {
        SelectionDoc {
            grid_l1: sel.grid.lambda1_values().to_vec(),
            grid_l2: sel.grid.lambda2_values().to_vec(),
            folds: sel.folds,
            scores: Matrix::from_array(&sel.score_table.mapv(|v| {
                if v.is_nan() {
                    None
                } else {
                    Some(v)
                }
            })),
            best_index: sel.best_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDoc {
    pub replicates: usize,
    pub seed: u64,
    pub reuse_tuning: bool,
    pub failed: usize,
    pub unreliable: bool,
    pub level: f64,
    pub lower: Matrix,
    pub upper: Matrix,
    pub gamma_lower: Vec<f64>,
    pub gamma_upper: Vec<f64>,
    pub excludes_zero: Matrix<bool>,
    pub intensity: Matrix,
}

impl BootstrapDoc {
    pub fn of(
        dist: &BootstrapDistribution,
        seed: u64,
        reuse_tuning: bool,
        band: &ConfidenceBand,
        windows: &CriticalWindowReport,
    ) -> Self {
        BootstrapDoc {
            replicates: dist.converged.len(),
            seed,
            reuse_tuning,
            failed: dist.failed,
            unreliable: dist.unreliable,
            level: band.level,
            lower: Matrix::from_array(&band.lower),
            upper: Matrix::from_array(&band.upper),
            gamma_lower: band.gamma_lower.to_vec(),
            gamma_upper: band.gamma_upper.to_vec(),
            excludes_zero: Matrix::from_array(&windows.excludes_zero),
            intensity: Matrix::from_array(&windows.intensity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub format: String,
    pub schema_version: String,
    pub software_version: String,
    pub command: String,
    pub estimator: EstimatorKind,
    pub tau: f64,
    pub tuning: Tuning,
    /// an all-ones column was prepended to the covariates; it is `gamma[0]`
    pub intercept: bool,
    pub seed: u64,
    pub solver: SolverSettings,
    pub beta: Matrix,
    pub gamma: Vec<f64>,
    pub modes: Option<Vec<usize>>,
    pub diagnostics: Diagnostics,
    pub selection: Option<SelectionDoc>,
    pub bootstrap: Option<BootstrapDoc>,
}

pub struct DocHeader<'a> {
    pub command: &'a str,
    pub estimator: EstimatorKind,
    pub tau: f64,
    pub intercept: bool,
    pub seed: u64,
    pub solver: SolverSettings,
}

impl ResultDocument {
    pub fn new(head: DocHeader<'_>, cell: (f64, f64), fit: &FitResult) -> Self {
        ResultDocument {
            format: RESULT_FORMAT.into(),
            schema_version: SCHEMA_VERSION.into(),
            software_version: SOFTWARE_VERSION.into(),
            command: head.command.into(),
            estimator: head.estimator,
            tau: head.tau,
            tuning: Tuning::from_cell(head.estimator, cell),
            intercept: head.intercept,
            seed: head.seed,
            solver: head.solver,
            beta: Matrix::from_array(fit.beta.as_array()),
            gamma: fit.gamma.as_array().to_vec(),
            modes: fit.modes.as_ref().map(|m| m.as_slice().to_vec()),
            diagnostics: Diagnostics::of(fit),
            selection: None,
            bootstrap: None,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
        check_header(&value, RESULT_FORMAT, path)?;
        serde_json::from_value(value).map_err(|e| CliError::io(path, e))
    }
}

/// Rejects documents of another kind or another major schema version.
pub fn check_header(value: &serde_json::Value, format: &str, path: &Path) -> CliResult<()> {
    let found = value.get("format").and_then(|v| v.as_str());
    if found != Some(format) {
        return Err(CliError::io(
            path,
            format!("expected a {format} document, found {found:?}"),
        ));
    }
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .unwrap_or("");
    if major(version) != major(SCHEMA_VERSION) {
        return Err(CliError::io(
            path,
            format!("incompatible schema version {version:?} (this build reads {SCHEMA_VERSION})"),
        ));
    }
    Ok(())
}

fn major(version: &str) -> Option<&str> {
    version.split('.').next().filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub format: String,
    pub schema_version: String,
    pub software_version: String,
    pub model: Model,
    pub error: ErrorLaw,
    pub n: usize,
    pub snr: f64,
    pub tau: f64,
    pub seed: u64,
    pub replicate: u64,
    pub beta_star: Matrix,
    pub gamma_star: Vec<f64>,
    pub sigma: f64,
    pub modes: Vec<usize>,
    pub quantile_shift: f64,
}

impl TruthDocument {
    pub fn new(cfg: &SimConfig, truth: &SimTruth) -> Self {
        TruthDocument {
            format: TRUTH_FORMAT.into(),
            schema_version: SCHEMA_VERSION.into(),
            software_version: SOFTWARE_VERSION.into(),
            model: cfg.model,
            error: cfg.error,
            n: cfg.n,
            snr: cfg.snr,
            tau: cfg.tau.value(),
            seed: cfg.seed,
            replicate: cfg.replicate,
            beta_star: Matrix::from_array(truth.beta_star.as_array()),
            gamma_star: truth.gamma_star.as_array().to_vec(),
            sigma: truth.sigma,
            modes: truth.modes.as_slice().to_vec(),
            quantile_shift: truth.quantile_shift,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
        check_header(&value, TRUTH_FORMAT, path)?;
        serde_json::from_value(value).map_err(|e| CliError::io(path, e))
    }
}
