//! Exact proximal operators used inside the ADMM iterations.

mod concave;
mod isotonic;

pub use concave::{prox_concave, ConcaveProx, ConcaveWarmStart};
pub use isotonic::{isotonic_regression, nearly_isotonic, Direction};

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::lagmodel::QuantileLevel;

/// Controls for the iterative nearly-concave prox.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxSettings {
    pub inner_max_iter: usize,
    pub inner_tol: f64,
    /// `σ` of the fallback ADMM splitting
    pub inner_step: f64,
}

impl Default for ProxSettings {
    fn default() -> Self {
        ProxSettings {
            inner_max_iter: 10_000,
            inner_tol: 1e-8,
            inner_step: 1.0,
        }
    }
}

impl ProxSettings {
    pub fn validate(&self) -> Result<()> {
        if self.inner_max_iter == 0 || !(self.inner_tol > 0.0) || !(self.inner_step > 0.0) {
            return param_err(format!("prox settings must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// Prox of `ρ_τ / α` at `ξ`.
#[inline]
pub fn prox_check(xi: f64, tau: QuantileLevel, alpha: f64) -> f64 {
    let t = tau.value();
    if xi > t / alpha {
        xi - t / alpha
    } else if xi < (t - 1.0) / alpha {
        xi - (t - 1.0) / alpha
    } else {
        0.0
    }
}

/// Prox of `λ|·|`.
#[inline]
pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Prox of `λ h̄(·; mode)`: a nearly-increasing fit on `s[..mode]` and a
/// nearly-decreasing fit on `s[mode..]`. `mode` is 1-based.
pub fn prox_unimodal(s: &[f64], mode: usize, lambda: f64) -> Result<Vec<f64>> {
    if mode < 1 || mode > s.len() {
        return param_err(format!("mode {mode} outside 1..={}", s.len()));
    }
    if !(lambda >= 0.0) {
        return param_err(format!("prox weight must be >= 0, got {lambda}"));
    }
    Ok(prox_unimodal_unchecked(s, mode, lambda))
}

pub(crate) fn prox_unimodal_unchecked(s: &[f64], mode: usize, lambda: f64) -> Vec<f64> {
    let (head, tail) = s.split_at(mode);
    let mut out = nearly_isotonic(head, lambda, Direction::Increasing);
    out.extend(nearly_isotonic(tail, lambda, Direction::Decreasing));
    out
}
