//! Flags shared by the model-fitting subcommands.

use std::path::{Path, PathBuf};

use clap::Args;
use qdlag::{QuantileLevel, RegressionData};

use crate::data_io::read_dataset;
use crate::document::{EstimatorKind, SolverSettings};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// ADMM step size [default: scaled to the response]
    #[arg(long)]
    pub rho: Option<f64>,
    /// primal stopping tolerance
    #[arg(long, default_value_t = 1e-4)]
    pub eps1: f64,
    /// dual stopping tolerance
    #[arg(long, default_value_t = 1e-4)]
    pub eps2: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    /// cap on mode-update rounds of the unimodal estimator
    #[arg(long, default_value_t = 50)]
    pub max_outer_iter: usize,
}

impl SolverArgs {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            rho: self.rho,
            eps1: self.eps1,
            eps2: self.eps2,
            max_iter: self.max_iter,
            max_outer_iter: self.max_outer_iter,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// input CSV (columns y, z1..zp, x1_01..xK_T)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, value_enum)]
    pub estimator: EstimatorKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// do not prepend an intercept column to the covariates
    #[arg(long)]
    pub no_intercept: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

impl ModelArgs {
    pub fn tau(&self) -> CliResult<QuantileLevel> {
        Ok(QuantileLevel::new(self.tau)?)
    }

    pub fn load(&self, path: &Path) -> CliResult<RegressionData> {
        load_data(path, !self.no_intercept)
    }
}

pub fn load_data(path: &Path, intercept: bool) -> CliResult<RegressionData> {
    let data = read_dataset(path)?;
    Ok(if intercept {
        data.with_intercept()
    } else {
        data
    })
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// shape penalty weight (uni, concave)
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// smoothness penalty weight (uni, concave)
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// overall penalty weight (en, ridge)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// lasso share of the penalty (en)
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl TuningArgs {
    /// The grid cell `(a, b)` of the estimator.
    pub fn cell(&self, kind: EstimatorKind) -> CliResult<(f64, f64)> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                CliError::Usage(format!(
                    "--{name} is required for --estimator {}",
                    kind.name()
                ))
            })
        };
        let forbid = |v: Option<f64>, name: &str| match v {
            Some(_) => Err(CliError::Usage(format!(
                "--{name} does not apply to --estimator {}",
                kind.name()
            ))),
            None => Ok(()),
        };
        match kind {
            EstimatorKind::Uni | EstimatorKind::Concave => {
                forbid(self.lambda, "lambda")?;
                forbid(self.alpha, "alpha")?;
                Ok((
                    need(self.lambda1, "lambda1")?,
                    need(self.lambda2, "lambda2")?,
                ))
            }
            EstimatorKind::En | EstimatorKind::Ridge => {
                forbid(self.lambda1, "lambda1")?;
                forbid(self.lambda2, "lambda2")?;
                let lambda = need(self.lambda, "lambda")?;
                if kind == EstimatorKind::Ridge {
                    if self.alpha.is_some_and(|a| a != 0.0) {
                        return Err(CliError::Usage("ridge fixes --alpha at 0".into()));
                    }
                    Ok((lambda, 0.0))
                } else {
                    Ok((lambda, need(self.alpha, "alpha")?))
                }
            }
        }
    }
}
