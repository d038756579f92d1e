//! Wild-bootstrap inference for the lag coefficients: replicate fits on
//! residual-perturbed responses, percentile bands, and critical windows.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmState, FitResult};
use crate::error::{param_err, QdlagError, Result};
use crate::lagmodel::{QuantileLevel, RegressionData};
use crate::selection::{fit_estimator, select_cv, SelectionResult};
use crate::unimodal::DescentConfig;

/// Share of failed replicates above which the distribution is unreliable.
pub const MAX_FAILED_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// refit every replicate at the base tuning instead of re-running CV
    pub reuse_tuning: bool,
    /// folds of the per-replicate CV when tuning is not reused
    pub folds: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            level: 0.95,
            seed: 0,
            reuse_tuning: true,
            folds: 5,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return param_err(format!(
                "need at least 2 replicates, got {}",
                self.replicates
            ));
        }
        check_level(self.level)
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return param_err(format!("level must lie in (0, 1), got {level}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDistribution {
    /// `B × K × T`; rows of failed replicates are `NaN`
    pub beta_reps: Array3<f64>,
    /// `B × p`
    pub gamma_reps: Array2<f64>,
    pub converged: Vec<bool>,
    /// replicates that errored or did not converge
    pub failed: usize,
    pub unreliable: bool,
    pub base_fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
    pub gamma_lower: Array1<f64>,
    pub gamma_upper: Array1<f64>,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalWindowReport {
    /// `0 ∉ [lower, upper]`
    pub excludes_zero: Array2<bool>,
    /// the endpoint nearer zero when the band excludes it (negative for
    /// bands below zero), else 0
    pub intensity: Array2<f64>,
}

/// Two-point weights: `2(1 − τ)` with probability `1 − τ`, `−2τ` otherwise.
pub fn draw_weights<R: Rng + ?Sized>(n: usize, tau: QuantileLevel, rng: &mut R) -> Array1<f64> {
    let t = tau.value();
    Array1::from_iter((0..n).map(|_| {
        if rng.random::<f64>() < 1.0 - t {
            2.0 * (1.0 - t)
        } else {
            -2.0 * t
        }
    }))
}

/// Generator of replicate `b`: one counter-based stream of the master seed.
pub fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64 + 1);
    rng
}

/// Replicates the selected estimator. Each replicate perturbs residuals of
/// the base refit, `y* = ŷ + w ê`, and refits; with `reuse_tuning` the base
/// tuning is kept and the fit is warm-started at the base estimate,
/// otherwise the replicate reruns cross-validation.
pub fn bootstrap(
    data: &RegressionData,
    tau: QuantileLevel,
    base: &SelectionResult,
    config: &BootstrapConfig,
    fit_config: &DescentConfig,
) -> Result<BootstrapDistribution> {
    config.validate()?;
    let base_fit = &base.refit;
    if !base_fit.converged {
        return Err(QdlagError::InvalidParameter(
            "the base fit did not converge".into(),
        ));
    }
    let fitted = data.linear_predictor(&base_fit.beta, &base_fit.gamma)?;
    let resid = &data.response() - &fitted;
    let (k, t, p) = (data.k(), data.t(), data.p());

    let outcomes: Vec<Option<FitResult>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(config.seed, b);
            let w = draw_weights(data.n(), tau, &mut rng);
            let y_star = &fitted + &(&w * &resid);
            let rep = data.with_response(y_star.clone()).ok()?;
            let fit = if config.reuse_tuning {
                let init = AdmmState {
                    r: &y_star - &fitted,
                    ..base_fit.state.clone()
                };
                fit_estimator(
                    &rep,
                    tau,
                    base.estimator,
                    base.best.0,
                    base.best.1,
                    fit_config,
                    Some(&init),
                )
            } else {
                let cfg = DescentConfig {
                    seed: fit_config.seed.wrapping_add(b as u64 + 1),
                    ..*fit_config
                };
                select_cv(&rep, tau, &base.grid, config.folds, base.estimator, &cfg)
                    .map(|s| s.refit)
            };
            fit.ok()
        })
        .collect();

    let b_count = config.replicates;
    let mut beta_reps = Array3::from_elem((b_count, k, t), f64::NAN);
    let mut gamma_reps = Array2::from_elem((b_count, p), f64::NAN);
    let mut converged = vec![false; b_count];
    for (b, out) in outcomes.into_iter().enumerate() {
        if let Some(fit) = out {
            beta_reps
                .index_axis_mut(Axis(0), b)
                .assign(fit.beta.as_array());
            gamma_reps.row_mut(b).assign(fit.gamma.as_array());
            converged[b] = fit.converged;
        }
    }
    let failed = converged.iter().filter(|c| !**c).count();
    Ok(BootstrapDistribution {
        beta_reps,
        gamma_reps,
        converged,
        failed,
        unreliable: failed as f64 > MAX_FAILED_SHARE * b_count as f64,
        base_fit: base_fit.clone(),
    })
}

/// Linear interpolation between order statistics (`h = (m − 1) q`).
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_pair(values: impl Iterator<Item = f64>, level: f64) -> (f64, f64) {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (
        empirical_quantile(&v, alpha),
        empirical_quantile(&v, 1.0 - alpha),
    )
}

/// Elementwise percentile band over the replicates with finite estimates.
pub fn intervals(dist: &BootstrapDistribution, level: f64) -> Result<ConfidenceBand> {
    check_level(level)?;
    let (b, k, t) = dist.beta_reps.dim();
    if b < 2 {
        return param_err("need at least 2 replicates");
    }
    let mut lower = Array2::zeros((k, t));
    let mut upper = Array2::zeros((k, t));
    for i in 0..k {
        for j in 0..t {
            let (lo, hi) = percentile_pair((0..b).map(|r| dist.beta_reps[[r, i, j]]), level);
            lower[[i, j]] = lo;
            upper[[i, j]] = hi;
        }
    }
    let p = dist.gamma_reps.ncols();
    let mut gamma_lower = Array1::zeros(p);
    let mut gamma_upper = Array1::zeros(p);
    for j in 0..p {
        let (lo, hi) = percentile_pair(dist.gamma_reps.column(j).iter().copied(), level);
        gamma_lower[j] = lo;
        gamma_upper[j] = hi;
    }
    Ok(ConfidenceBand {
        lower,
        upper,
        gamma_lower,
        gamma_upper,
        level,
    })
}

/// Cells whose band excludes zero. Zero on an endpoint counts as included.
pub fn critical_windows(band: &ConfidenceBand) -> CriticalWindowReport {
    let dim = band.lower.dim();
    let mut excludes_zero = Array2::from_elem(dim, false);
    let mut intensity = Array2::zeros(dim);
    for ((i, j), &lo) in band.lower.indexed_iter() {
        let hi = band.upper[[i, j]];
        if lo > 0.0 {
            excludes_zero[[i, j]] = true;
            intensity[[i, j]] = lo;
        } else if hi < 0.0 {
            excludes_zero[[i, j]] = true;
            intensity[[i, j]] = hi;
        }
    }
    CriticalWindowReport {
        excludes_zero,
        intensity,
    }
}
