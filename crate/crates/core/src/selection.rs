//! Tuning-parameter selection over a two-way grid by K-fold cross-validation
//! or a held-out validation set, scored by mean check loss.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmSolver, AdmmState, CoefPenalty, FitResult, QuadraticOperator};
use crate::baselines::EnConfig;
use crate::error::{param_err, QdlagError, Result};
use crate::lagmodel::{mean_check_loss, QuantileLevel, RegressionData};
use crate::unimodal::{fit_unimodal_with, DescentConfig};

/// Estimator family. The grid's two axes are `(λ1, λ2)` for the shape
/// estimators and `(λ, α)` for the elastic net; ridge is the elastic net
/// with the `α` axis fixed at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Unimodal,
    Concave,
    ElasticNet,
}

impl Estimator {
    fn check_cell(self, a: f64, b: f64) -> Result<()> {
        if !(a >= 0.0) || !a.is_finite() {
            return param_err(format!(
                "first tuning parameter must be finite and >= 0, got {a}"
            ));
        }
        match self {
            Estimator::Unimodal | Estimator::Concave if !(b > 0.0) || !b.is_finite() => {
                param_err(format!("lambda2 must be finite and > 0, got {b}"))
            }
            Estimator::ElasticNet if !(0.0..=1.0).contains(&b) => {
                param_err(format!("alpha must lie in [0, 1], got {b}"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the solver's augmented problem depends on the first parameter.
    fn problem_depends_on_first(self) -> bool {
        self == Estimator::ElasticNet
    }
}

/// Solver prepared for one grid column (or one cell, for the elastic net).
pub struct CellSolver<'a> {
    estimator: Estimator,
    solver: AdmmSolver<'a>,
    b: f64,
}

impl<'a> CellSolver<'a> {
    pub fn new(
        data: &'a RegressionData,
        tau: QuantileLevel,
        estimator: Estimator,
        a: f64,
        b: f64,
        config: &DescentConfig,
    ) -> Result<Self> {
        estimator.check_cell(a, b)?;
        let solver = match estimator {
            Estimator::Unimodal | Estimator::Concave => {
                AdmmSolver::smooth(data, tau, b, config.admm)?
            }
            Estimator::ElasticNet => {
                let cfg = EnConfig::new(a, b, config.admm)?;
                AdmmSolver::new(
                    data,
                    tau,
                    QuadraticOperator::Identity,
                    a * (1.0 - b) / 2.0,
                    cfg.admm,
                )?
            }
        };
        Ok(CellSolver {
            estimator,
            solver,
            b,
        })
    }

    pub fn fit(
        &self,
        a: f64,
        config: &DescentConfig,
        init: Option<&AdmmState>,
    ) -> Result<FitResult> {
        self.estimator.check_cell(a, self.b)?;
        match self.estimator {
            Estimator::Unimodal => fit_unimodal_with(&self.solver, a, config, init),
            Estimator::Concave => self.solver.fit(a, &CoefPenalty::Concave, init),
            Estimator::ElasticNet => self.solver.fit(a * self.b, &CoefPenalty::Lasso, init),
        }
    }
}

/// Fits one estimator at one grid cell.
pub fn fit_estimator(
    data: &RegressionData,
    tau: QuantileLevel,
    estimator: Estimator,
    a: f64,
    b: f64,
    config: &DescentConfig,
    init: Option<&AdmmState>,
) -> Result<FitResult> {
    CellSolver::new(data, tau, estimator, a, b, config)?.fit(a, config, init)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    lambda1_values: Vec<f64>,
    lambda2_values: Vec<f64>,
}

impl TuningGrid {
    /// Sorts ascending and drops duplicates.
    pub fn new(mut lambda1_values: Vec<f64>, mut lambda2_values: Vec<f64>) -> Result<Self> {
        for v in lambda1_values.iter().chain(&lambda2_values) {
            if !v.is_finite() {
                return param_err("grid values must be finite");
            }
        }
        lambda1_values.sort_by(f64::total_cmp);
        lambda1_values.dedup();
        lambda2_values.sort_by(f64::total_cmp);
        lambda2_values.dedup();
        if lambda1_values.is_empty() || lambda2_values.is_empty() {
            return param_err("tuning grid axes must be nonempty");
        }
        if lambda1_values[0] < 0.0 {
            return param_err("lambda1 values must be >= 0");
        }
        if lambda2_values[0] <= 0.0 {
            return param_err("lambda2 values must be > 0");
        }
        Ok(TuningGrid {
            lambda1_values,
            lambda2_values,
        })
    }

    /// Grid over `(λ, α)` for the elastic net; `α = 0` is allowed.
    pub fn elastic_net(lambdas: Vec<f64>, alphas: Vec<f64>) -> Result<Self> {
        let mut grid = TuningGrid::new(lambdas, vec![1.0])?;
        let mut alphas = alphas;
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return param_err("alpha values must lie in [0, 1]");
        }
        grid.lambda2_values = alphas;
        Ok(grid)
    }

    /// Log-spaced values `10^lo ..= 10^hi`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        if count <= 1 {
            return vec![10f64.powf(hi)];
        }
        (0..count)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
            .collect()
    }

    pub fn lambda1_values(&self) -> &[f64] {
        &self.lambda1_values
    }
    pub fn lambda2_values(&self) -> &[f64] {
        &self.lambda2_values
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.lambda1_values.len(), self.lambda2_values.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub estimator: Estimator,
    pub grid: TuningGrid,
    /// `(λ1, λ2)`, or `(λ, α)` for the elastic net
    pub best: (f64, f64),
    pub best_index: (usize, usize),
    /// rows follow `λ1`, columns `λ2`; `NaN` marks cells with no converged fit
    pub score_table: Array2<f64>,
    pub folds: Option<usize>,
    pub seed: u64,
    pub refit: FitResult,
}

/// Mean check loss of the fit on `holdout`.
pub fn validation_score(
    fit: &FitResult,
    holdout: &RegressionData,
    tau: QuantileLevel,
) -> Result<f64> {
    if holdout.n() == 0 {
        return Err(QdlagError::Selection("empty holdout set".into()));
    }
    let resid = holdout.residuals(&fit.beta, &fit.gamma)?;
    Ok(mean_check_loss(resid.view(), tau))
}

/// Seeded partition of `0..n` into `folds` groups of near-equal size, each
/// sorted.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return param_err(format!("need at least 2 folds, got {folds}"));
    }
    if n < folds {
        return param_err(format!("{folds} folds exceed {n} observations"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        parts[pos % folds].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Fits every cell on `train` in warm-start order (second axis descending
/// outside, first axis descending inside) and scores each on `holdout`.
/// Returns `NaN` for cells whose fit failed or did not converge.
fn score_grid(
    train: &RegressionData,
    holdout: &RegressionData,
    tau: QuantileLevel,
    grid: &TuningGrid,
    estimator: Estimator,
    config: &DescentConfig,
) -> Array2<f64> {
    let (na, nb) = grid.shape();
    let mut scores = Array2::from_elem((na, nb), f64::NAN);
    let mut column_start: Option<AdmmState> = None;
    for j in (0..nb).rev() {
        let b = grid.lambda2_values[j];
        let column_solver = if estimator.problem_depends_on_first() {
            None
        } else {
            CellSolver::new(train, tau, estimator, grid.lambda1_values[0], b, config).ok()
        };
        let mut prev = column_start.clone();
        for i in (0..na).rev() {
            let a = grid.lambda1_values[i];
            let fit = match &column_solver {
                Some(s) => s.fit(a, config, prev.as_ref()),
                None if estimator.problem_depends_on_first() => {
                    CellSolver::new(train, tau, estimator, a, b, config)
                        .and_then(|s| s.fit(a, config, prev.as_ref()))
                }
                None => continue,
            };
            if let Ok(fit) = fit {
                if fit.converged {
                    if let Ok(score) = validation_score(&fit, holdout, tau) {
                        scores[[i, j]] = score;
                    }
                }
                if i + 1 == na {
                    column_start = Some(fit.state.clone());
                }
                prev = Some(fit.state);
            }
        }
    }
    scores
}

/// Minimal score, ties to the larger first parameter, then the larger second.
fn pick_best(scores: &Array2<f64>) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for ((i, j), &s) in scores.indexed_iter() {
        if s.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some(((bi, bj), bs)) => s < bs || (s == bs && (i > bi || (i == bi && j > bj))),
        };
        if better {
            best = Some(((i, j), s));
        }
    }
    best.map(|(ix, _)| ix)
}

fn finish(
    data: &RegressionData,
    tau: QuantileLevel,
    grid: &TuningGrid,
    estimator: Estimator,
    config: &DescentConfig,
    scores: Array2<f64>,
    folds: Option<usize>,
) -> Result<SelectionResult> {
    let (i, j) = pick_best(&scores)
        .ok_or_else(|| QdlagError::Selection("no grid cell produced a converged fit".into()))?;
    let best = (grid.lambda1_values[i], grid.lambda2_values[j]);
    let refit = fit_estimator(data, tau, estimator, best.0, best.1, config, None)?;
    Ok(SelectionResult {
        estimator,
        grid: grid.clone(),
        best,
        best_index: (i, j),
        score_table: scores,
        folds,
        seed: config.seed,
        refit,
    })
}

fn check_grid(grid: &TuningGrid, estimator: Estimator) -> Result<()> {
    for &a in &grid.lambda1_values {
        for &b in &grid.lambda2_values {
            estimator.check_cell(a, b)?;
        }
    }
    Ok(())
}

/// K-fold cross-validation. Folds run in parallel; each fold walks the grid
/// with warm starts. The cell score averages the converged folds; the winner
/// is refit on all of `data` from a cold start.
pub fn select_cv(
    data: &RegressionData,
    tau: QuantileLevel,
    grid: &TuningGrid,
    folds: usize,
    estimator: Estimator,
    config: &DescentConfig,
) -> Result<SelectionResult> {
    check_grid(grid, estimator)?;
    config.validate()?;
    let parts = fold_partition(data.n(), folds, config.seed)?;
    let per_fold: Vec<Array2<f64>> = parts
        .par_iter()
        .map(|test_idx| {
            let mut in_test = vec![false; data.n()];
            for &i in test_idx {
                in_test[i] = true;
            }
            let train_idx: Vec<usize> = (0..data.n()).filter(|&i| !in_test[i]).collect();
            let train = data.subset(&train_idx);
            let test = data.subset(test_idx);
            score_grid(&train, &test, tau, grid, estimator, config)
        })
        .collect();
    let (na, nb) = grid.shape();
    let scores = Array2::from_shape_fn((na, nb), |(i, j)| {
        let vals: Vec<f64> = per_fold
            .iter()
            .map(|s| s[[i, j]])
            .filter(|v| !v.is_nan())
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    });
    finish(data, tau, grid, estimator, config, scores, Some(folds))
}

/// One fit per cell on `train`, scored on `validation`; the winner is refit
/// on `train` from a cold start.
pub fn select_holdout(
    train: &RegressionData,
    validation: &RegressionData,
    tau: QuantileLevel,
    grid: &TuningGrid,
    estimator: Estimator,
    config: &DescentConfig,
) -> Result<SelectionResult> {
    check_grid(grid, estimator)?;
    config.validate()?;
    if train.k() != validation.k() || train.t() != validation.t() || train.p() != validation.p() {
        return Err(QdlagError::Dimension(format!(
            "validation has (K, T, p) = ({}, {}, {}), training has ({}, {}, {})",
            validation.k(),
            validation.t(),
            validation.p(),
            train.k(),
            train.t(),
            train.p()
        )));
    }
    let scores = score_grid(train, validation, tau, grid, estimator, config);
    finish(train, tau, grid, estimator, config, scores, None)
}
