//! Elastic-net and ridge penalized quantile regression, used as competitors.
//!
//! The ridge part rides in the quadratic block of the ADMM solver with the
//! identity operator; the lasso part is the nonsmooth `g`, whose prox is
//! soft-thresholding.

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, AdmmSolver, AdmmState, CoefPenalty, FitResult, QuadraticOperator};
use crate::error::{param_err, Result};
use crate::lagmodel::{QuantileLevel, RegressionData};

/// Penalty `λ Σ_k ((1 − α)/2 ‖β_k‖² + α ‖β_k‖₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub admm: AdmmConfig,
}

impl EnConfig {
    pub fn new(lambda: f64, alpha: f64, admm: AdmmConfig) -> Result<Self> {
        let cfg = EnConfig {
            lambda,
            alpha,
            admm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return param_err(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return param_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        self.admm.validate()
    }

    fn ridge_weight(&self) -> f64 {
        self.lambda * (1.0 - self.alpha) / 2.0
    }
}

/// Solver for a fixed `(λ, α)`.
pub fn en_solver<'a>(
    data: &'a RegressionData,
    tau: QuantileLevel,
    cfg: &EnConfig,
) -> Result<AdmmSolver<'a>> {
    cfg.validate()?;
    AdmmSolver::new(
        data,
        tau,
        QuadraticOperator::Identity,
        cfg.ridge_weight(),
        cfg.admm,
    )
}

pub fn fit_en(data: &RegressionData, tau: QuantileLevel, cfg: &EnConfig) -> Result<FitResult> {
    fit_en_from(data, tau, cfg, None)
}

/// As [`fit_en`], warm-started.
pub fn fit_en_from(
    data: &RegressionData,
    tau: QuantileLevel,
    cfg: &EnConfig,
    init: Option<&AdmmState>,
) -> Result<FitResult> {
    let solver = en_solver(data, tau, cfg)?;
    solver.fit(cfg.lambda * cfg.alpha, &CoefPenalty::Lasso, init)
}

pub fn fit_ridge(
    data: &RegressionData,
    tau: QuantileLevel,
    lambda: f64,
    admm: AdmmConfig,
) -> Result<FitResult> {
    fit_en(data, tau, &EnConfig::new(lambda, 0.0, admm)?)
}
