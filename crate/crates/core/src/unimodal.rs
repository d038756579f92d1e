//! Nearly-unimodal estimator: blockwise descent alternating an exact mode
//! search with an ADMM solve at fixed modes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, AdmmSolver, AdmmState, CoefPenalty, FitResult};
use crate::error::{param_err, Result};
use crate::lagmodel::{LagCoefficients, ModeVector, QuantileLevel, RegressionData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub max_outer_iter: usize,
    /// stop once the relative objective decrease falls below this
    pub objective_tol: f64,
    pub admm: AdmmConfig,
    /// seed of the mode tie-break draws
    pub seed: u64,
    /// starting point when no warm start is supplied
    pub start: DescentStart,
}

/// Starting coefficients of the descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DescentStart {
    /// `β = 0`: every mode ties, so the first modes are a uniform draw
    Zero,
    /// the `λ1 = 0` fit, whose lag curves suggest the modes
    #[default]
    Unpenalized,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            max_outer_iter: 50,
            objective_tol: 1e-6,
            admm: AdmmConfig::default(),
            seed: 0,
            start: DescentStart::default(),
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iter == 0 || !(self.objective_tol > 0.0) {
            return param_err("max_outer_iter and objective_tol must be positive");
        }
        self.admm.validate()
    }
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterStop {
    ModesStable,
    ObjectiveStalled,
    /// `λ1 = 0`: modes do not enter the objective
    ShapeInactive,
    /// an inner solve failed to decrease the objective even after a retry
    NoDescent,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterEntry {
    pub modes: Vec<usize>,
    pub objective: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub retried: bool,
}

/// Outer-loop record attached to unimodal fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentDiagnostics {
    pub seed: u64,
    pub stop: OuterStop,
    /// accepted outer iterates; objectives are non-increasing
    pub outer: Vec<OuterEntry>,
}

/// Penalty values `h̄(β_k; m)` for `m = 1..=T` (index `m − 1`).
pub fn mode_penalties(beta_k: &[f64]) -> Vec<f64> {
    let t = beta_k.len();
    // rise[m] = Σ_{i < m} (β_i − β_{i+1})^+ over the first m entries
    let mut rise = vec![0.0; t + 1];
    for m in 2..=t {
        rise[m] = rise[m - 1] + (beta_k[m - 2] - beta_k[m - 1]).max(0.0);
    }
    // fall[m] = Σ over pairs inside entries m+1..T of (β_{i+1} − β_i)^+
    let mut fall = vec![0.0; t + 1];
    for m in (0..t.saturating_sub(1)).rev() {
        fall[m] = fall[m + 1] + (beta_k[m + 1] - beta_k[m]).max(0.0);
    }
    (1..=t).map(|m| rise[m] + fall[m]).collect()
}

/// All modes (1-based) attaining the minimal penalty.
pub fn mode_minimizers(beta_k: &[f64]) -> Vec<usize> {
    let pen = mode_penalties(beta_k);
    let best = pen.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = beta_k.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * (1.0 + scale);
    pen.iter()
        .enumerate()
        .filter(|(_, v)| **v <= best + tol)
        .map(|(i, _)| i + 1)
        .collect()
}

/// A penalty-minimizing mode, drawn uniformly among ties.
pub fn best_mode<R: Rng + ?Sized>(beta_k: &[f64], rng: &mut R) -> usize {
    let cands = mode_minimizers(beta_k);
    if cands.len() == 1 {
        cands[0]
    } else {
        cands[rng.random_range(0..cands.len())]
    }
}

fn mode_step<R: Rng + ?Sized>(beta: &LagCoefficients, rng: &mut R) -> Result<ModeVector> {
    let (k, t) = beta.dim();
    let modes = (0..k)
        .map(|j| best_mode(&beta.row(j).to_vec(), rng))
        .collect();
    ModeVector::new(modes, t)
}

/// Fits the nearly-unimodal estimator with free modes.
pub fn fit_unimodal(
    data: &RegressionData,
    tau: QuantileLevel,
    lambda1: f64,
    lambda2: f64,
    config: &DescentConfig,
    init: Option<&AdmmState>,
) -> Result<FitResult> {
    config.validate()?;
    let solver = AdmmSolver::smooth(data, tau, lambda2, config.admm)?;
    fit_unimodal_with(&solver, lambda1, config, init)
}

/// As [`fit_unimodal`], reusing a prepared solver.
pub fn fit_unimodal_with(
    solver: &AdmmSolver<'_>,
    lambda1: f64,
    config: &DescentConfig,
    init: Option<&AdmmState>,
) -> Result<FitResult> {
    config.validate()?;
    if !(lambda1 >= 0.0) || !lambda1.is_finite() {
        return param_err(format!("lambda1 must be finite and >= 0, got {lambda1}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::new();
    let mut total_iter = 0;
    let mut state = match (init, config.start) {
        (Some(s), _) => s.clone(),
        (None, DescentStart::Zero) => AdmmState::initial(solver.data()),
        (None, DescentStart::Unpenalized) => {
            let free = solver.fit(0.0, &CoefPenalty::None, None)?;
            total_iter += free.iterations;
            trace.extend(free.trace.iter().copied());
            free.state
        }
    };
    let max_iter = config.admm.max_iter;

    let mut outer: Vec<OuterEntry> = Vec::new();
    let mut current: Option<FitResult> = None;
    let mut prev_modes: Option<ModeVector> = None;
    let mut stop = OuterStop::MaxIterations;

    for _ in 0..config.max_outer_iter {
        let modes = mode_step(&state.beta, &mut rng)?;
        if prev_modes.as_ref() == Some(&modes) && current.as_ref().is_some_and(|f| f.converged) {
            stop = OuterStop::ModesStable;
            break;
        }
        let penalty = CoefPenalty::Unimodal(modes.clone());
        // objective of the incumbent coefficients under the new modes; the mode
        // step cannot raise it
        let reference = match &current {
            Some(_) => Some(solver.objective(&state.beta, &state.gamma, lambda1, &penalty)?),
            None => None,
        };
        let mut fit = solver.fit(lambda1, &penalty, Some(&state))?;
        total_iter += fit.iterations;
        trace.extend(fit.trace.iter().copied());
        let mut retried = false;
        let descended = |f: &FitResult| reference.is_none_or(|r| f.objective <= r);
        if !fit.converged || !descended(&fit) {
            retried = true;
            let tighter = solver.with_config(tightened(&config.admm))?;
            let again = tighter.fit_with_cap(lambda1, &penalty, Some(&fit.state), 2 * max_iter)?;
            total_iter += again.iterations;
            trace.extend(again.trace.iter().copied());
            fit = again;
        }
        if !descended(&fit) {
            stop = OuterStop::NoDescent;
            break;
        }
        let prev_obj = current.as_ref().map(|f| f.objective);
        outer.push(OuterEntry {
            modes: modes.as_slice().to_vec(),
            objective: fit.objective,
            inner_iterations: fit.iterations,
            inner_converged: fit.converged,
            retried,
        });
        state = fit.state.clone();
        current = Some(fit);
        prev_modes = Some(modes);
        if lambda1 == 0.0 {
            stop = OuterStop::ShapeInactive;
            break;
        }
        if let (Some(p), Some(c)) = (prev_obj, current.as_ref()) {
            if (p - c.objective) <= config.objective_tol * p.abs().max(f64::MIN_POSITIVE) {
                stop = OuterStop::ObjectiveStalled;
                break;
            }
        }
    }

    let mut fit = current.expect("the first outer iteration always yields a fit");
    fit.converged = fit.converged && stop != OuterStop::MaxIterations;
    fit.iterations = total_iter;
    fit.trace = trace;
    fit.descent = Some(DescentDiagnostics {
        seed: config.seed,
        stop,
        outer,
    });
    Ok(fit)
}

fn tightened(c: &AdmmConfig) -> AdmmConfig {
    AdmmConfig {
        eps1: c.eps1 / 10.0,
        eps2: c.eps2 / 10.0,
        ..*c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagmodel::unimodal_penalty;

    #[test]
    fn mode_examples() {
        // the decreasing segment starts after the mode, so the rise 1 → 3 is free at m = 1
        assert_eq!(mode_minimizers(&[1.0, 3.0, 2.0]), vec![1, 2]);
        assert_eq!(mode_minimizers(&[1.0, 3.0, 2.0, 0.0]), vec![1, 2]);
        assert_eq!(mode_minimizers(&[1.0, 2.0, 3.0, 0.0]), vec![2, 3]);
        assert_eq!(mode_minimizers(&[0.0, 1.0, 3.0, 2.0, 1.0]), vec![2, 3]);
        assert_eq!(mode_minimizers(&[3.0, 2.0, 1.0]), vec![1]);
        assert_eq!(mode_minimizers(&[2.0, 1.0, 3.0]), vec![2, 3]);
        assert_eq!(mode_minimizers(&[4.0; 5]), vec![1, 2, 3, 4, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(best_mode(&[3.0, 2.0, 1.0], &mut rng), 1);
    }

    #[test]
    fn penalties_agree_with_direct_evaluation() {
        let beta = [0.3, -1.0, 2.0, 2.0, 0.5, 1.7, -0.2];
        let pen = mode_penalties(&beta);
        for m in 1..=beta.len() {
            assert!((pen[m - 1] - unimodal_penalty(&beta, m).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn tie_draw_is_uniform_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 2];
        for _ in 0..20_000 {
            counts[best_mode(&[2.0, 1.0, 3.0], &mut rng) - 2] += 1;
        }
        assert!(
            (counts[0] as f64 / 20_000.0 - 0.5).abs() < 0.02,
            "{counts:?}"
        );
        let a: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| best_mode(&[0.0; 6], &mut r)).collect()
        };
        let b: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            (0..10).map(|_| best_mode(&[0.0; 6], &mut r)).collect()
        };
        assert_eq!(a, b);
    }
}
