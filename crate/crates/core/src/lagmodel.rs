//! Data model for quantile distributed-lag regression: observations, coefficient
//! blocks, difference operators, and the loss and penalty terms shared by every
//! estimator.
//!
//! Exposure histories are stored flattened: row `i` of the exposure design holds
//! `X_i` in exposure-major order, so entry `k * T + t` is exposure `k` at time
//! index `t`. Coefficient matrices use the same layout, which keeps each lag
//! curve `β_k` contiguous.
//!
//! Time and mode indices are 1-based at the public surface (`mode ∈ 1..=T`).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};

/// Quantile level `τ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            param_err(format!(
                "quantile level must lie strictly inside (0, 1), got {tau}"
            ))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = crate::error::QdlagError;
    fn try_from(v: f64) -> Result<Self> {
        QuantileLevel::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// Observed triplets `(y_i, X_i, Z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    exposures: Array2<f64>,
    covariates: Array2<f64>,
    response: Array1<f64>,
    time_points: Vec<f64>,
    k: usize,
    t: usize,
}

impl RegressionData {
    /// Builds a dataset from per-subject `K × T` exposure matrices.
    pub fn new(
        exposures: &[Array2<f64>],
        covariates: Array2<f64>,
        response: Array1<f64>,
        time_points: Option<Vec<f64>>,
    ) -> Result<Self> {
        let Some(first) = exposures.first() else {
            return dim_err("at least one observation is required");
        };
        let (k, t) = first.dim();
        let mut flat = Array2::<f64>::zeros((exposures.len(), k * t));
        for (i, xi) in exposures.iter().enumerate() {
            if xi.dim() != (k, t) {
                return dim_err(format!(
                    "exposure matrix {} has shape {:?}, expected ({k}, {t})",
                    i + 1,
                    xi.dim()
                ));
            }
            for (j, v) in xi.iter().enumerate() {
                flat[[i, j]] = *v;
            }
        }
        Self::from_flat(flat, k, t, covariates, response, time_points)
    }

    /// Builds a dataset from an `n × (K·T)` exposure-major design.
    ///
    /// `K = 0` is accepted and describes a covariate-only quantile regression.
    pub fn from_flat(
        exposures: Array2<f64>,
        k: usize,
        t: usize,
        covariates: Array2<f64>,
        response: Array1<f64>,
        time_points: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return dim_err("at least one observation is required");
        }
        if t < 3 {
            return dim_err(format!("need at least 3 time points, got {t}"));
        }
        if exposures.dim() != (n, k * t) {
            return dim_err(format!(
                "exposure design is {:?}, expected ({n}, {})",
                exposures.dim(),
                k * t
            ));
        }
        if covariates.nrows() != n {
            return dim_err(format!(
                "covariate rows ({}) differ from response length ({n})",
                covariates.nrows()
            ));
        }
        let time_points = time_points.unwrap_or_else(|| (1..=t).map(|v| v as f64).collect());
        if time_points.len() != t {
            return dim_err(format!(
                "{} time points given for T = {t}",
                time_points.len()
            ));
        }
        if exposures
            .iter()
            .chain(covariates.iter())
            .chain(response.iter())
            .any(|v| !v.is_finite())
        {
            return param_err("data contain non-finite values");
        }
        Ok(RegressionData {
            exposures,
            covariates,
            response,
            time_points,
            k,
            t,
        })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }
    pub fn exposures(&self) -> ArrayView2<'_, f64> {
        self.exposures.view()
    }
    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }
    pub fn response(&self) -> ArrayView1<'_, f64> {
        self.response.view()
    }
    pub fn time_points(&self) -> &[f64] {
        &self.time_points
    }

    /// `X_i` as a `K × T` matrix.
    pub fn exposure(&self, i: usize) -> Array2<f64> {
        self.exposures
            .row(i)
            .to_owned()
            .into_shape_with_order((self.k, self.t))
            .expect("row length is K*T")
    }

    /// Same design with a different response vector.
    pub fn with_response(&self, response: Array1<f64>) -> Result<Self> {
        if response.len() != self.n() {
            return dim_err(format!(
                "replacement response has length {}, expected {}",
                response.len(),
                self.n()
            ));
        }
        Ok(RegressionData {
            response,
            ..self.clone()
        })
    }

    /// Prepends a column of ones to the covariates.
    pub fn with_intercept(&self) -> Self {
        let n = self.n();
        let mut z = Array2::<f64>::ones((n, self.p() + 1));
        z.slice_mut(s![.., 1..]).assign(&self.covariates);
        RegressionData {
            covariates: z,
            ..self.clone()
        }
    }

    /// Observations at `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        RegressionData {
            exposures: self.exposures.select(Axis(0), rows),
            covariates: self.covariates.select(Axis(0), rows),
            response: self.response.select(Axis(0), rows),
            time_points: self.time_points.clone(),
            k: self.k,
            t: self.t,
        }
    }

    /// `tr(X_iᵀβ) + Z_iᵀγ` for every observation.
    pub fn linear_predictor(
        &self,
        beta: &LagCoefficients,
        gamma: &CovariateCoefficients,
    ) -> Result<Array1<f64>> {
        self.check_coefficients(beta, gamma)?;
        let flat = beta.flat();
        Ok(self.exposures.dot(&flat) + self.covariates.dot(gamma.as_array()))
    }

    /// `y_i − tr(X_iᵀβ) − Z_iᵀγ`.
    pub fn residuals(
        &self,
        beta: &LagCoefficients,
        gamma: &CovariateCoefficients,
    ) -> Result<Array1<f64>> {
        Ok(&self.response - &self.linear_predictor(beta, gamma)?)
    }

    pub(crate) fn check_coefficients(
        &self,
        beta: &LagCoefficients,
        gamma: &CovariateCoefficients,
    ) -> Result<()> {
        if beta.dim() != (self.k, self.t) {
            return dim_err(format!(
                "coefficients are {:?}, data have (K, T) = ({}, {})",
                beta.dim(),
                self.k,
                self.t
            ));
        }
        if gamma.len() != self.p() {
            return dim_err(format!(
                "covariate coefficients have length {}, data have p = {}",
                gamma.len(),
                self.p()
            ));
        }
        Ok(())
    }
}

/// Time-varying exposure effects, one lag curve per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCoefficients {
    beta: Array2<f64>,
}

impl LagCoefficients {
    pub fn new(beta: Array2<f64>) -> Result<Self> {
        if beta.iter().any(|v| !v.is_finite()) {
            return param_err("lag coefficients must be finite");
        }
        Ok(LagCoefficients { beta })
    }

    pub fn zeros(k: usize, t: usize) -> Self {
        LagCoefficients {
            beta: Array2::zeros((k, t)),
        }
    }

    /// Rebuilds a `K × T` matrix from its exposure-major flattening.
    pub fn from_flat(flat: &[f64], k: usize, t: usize) -> Result<Self> {
        if flat.len() != k * t {
            return dim_err(format!("flat length {} is not K*T = {}", flat.len(), k * t));
        }
        Self::new(Array2::from_shape_vec((k, t), flat.to_vec()).expect("length checked"))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.beta.dim()
    }
    pub fn as_array(&self) -> &Array2<f64> {
        &self.beta
    }
    pub fn into_array(self) -> Array2<f64> {
        self.beta
    }
    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.beta.row(k)
    }
    pub fn flat(&self) -> Array1<f64> {
        self.beta.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateCoefficients {
    gamma: Array1<f64>,
}

impl CovariateCoefficients {
    pub fn new(gamma: Array1<f64>) -> Result<Self> {
        if gamma.iter().any(|v| !v.is_finite()) {
            return param_err("covariate coefficients must be finite");
        }
        Ok(CovariateCoefficients { gamma })
    }
    pub fn zeros(p: usize) -> Self {
        CovariateCoefficients {
            gamma: Array1::zeros(p),
        }
    }
    pub fn len(&self) -> usize {
        self.gamma.len()
    }
    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
    pub fn as_array(&self) -> &Array1<f64> {
        &self.gamma
    }
}

/// Mode index `M_k ∈ 1..=T` for each exposure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeVector {
    modes: Vec<usize>,
}

impl ModeVector {
    pub fn new(modes: Vec<usize>, t: usize) -> Result<Self> {
        if let Some(m) = modes.iter().find(|&&m| m < 1 || m > t) {
            return param_err(format!("mode {m} outside 1..={t}"));
        }
        Ok(ModeVector { modes })
    }
    pub fn len(&self) -> usize {
        self.modes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
    pub fn as_slice(&self) -> &[usize] {
        &self.modes
    }
}

/// Banded `(T − v) × T` matrix of `v`-th order forward differences.
///
/// Row `j` applied to `x` gives `Σ_i c_i x_{j+i}` with `c_i = (−1)^i C(v, i)`,
/// so `D^(1)` rows read `(1, −1)` and `D^(2)` rows `(1, −2, 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferenceOperator {
    order: usize,
    length: usize,
    stencil: Vec<i64>,
}

/// `D^(v)` for sequences of length `length`, built as `D^(1)_{T−v+1} D^(v−1)`.
pub fn make_diff_operator(order: usize, length: usize) -> Result<DifferenceOperator> {
    if order == 0 {
        return param_err("difference order must be positive");
    }
    if order >= length {
        return dim_err(format!(
            "difference order {order} needs length > {order}, got {length}"
        ));
    }
    let mut stencil = vec![1i64, -1];
    for _ in 1..order {
        let mut next = vec![0i64; stencil.len() + 1];
        for (i, c) in stencil.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c;
        }
        stencil = next;
    }
    Ok(DifferenceOperator {
        order,
        length,
        stencil,
    })
}

impl DifferenceOperator {
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn length(&self) -> usize {
        self.length
    }
    pub fn rows(&self) -> usize {
        self.length - self.order
    }
    pub fn stencil(&self) -> &[i64] {
        &self.stencil
    }

    /// `D x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.length {
            return dim_err(format!(
                "difference operator expects length {}, got {}",
                self.length,
                x.len()
            ));
        }
        let mut out = vec![0.0; self.rows()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self
                .stencil
                .iter()
                .zip(&x[j..])
                .map(|(c, v)| *c as f64 * v)
                .sum();
        }
    }

    /// `Dᵀ y`, accumulated into `out`.
    pub(crate) fn add_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        for (j, yj) in y.iter().enumerate() {
            for (i, c) in self.stencil.iter().enumerate() {
                out[j + i] += *c as f64 * yj;
            }
        }
    }

    /// `Dᵀ y`.
    pub fn transpose_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows() {
            return dim_err(format!(
                "transpose expects length {}, got {}",
                self.rows(),
                y.len()
            ));
        }
        let mut out = vec![0.0; self.length];
        self.add_transpose_into(y, &mut out);
        Ok(out)
    }

    /// Dense copy, for inspection and tests.
    pub fn dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.rows(), self.length));
        for j in 0..self.rows() {
            for (i, c) in self.stencil.iter().enumerate() {
                m[[j, j + i]] = *c as f64;
            }
        }
        m
    }

    /// Entry `(i, j)` of `DᵀD` for `|i − j| ≤ order`.
    pub(crate) fn gram_entry(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let off = hi - lo;
        if off > self.order {
            return 0.0;
        }
        // rows r with r <= lo and hi <= r + order
        let r_min = hi.saturating_sub(self.order);
        let r_max = lo.min(self.rows().saturating_sub(1));
        if self.rows() == 0 || r_min > r_max {
            return 0.0;
        }
        (r_min..=r_max)
            .map(|r| (self.stencil[lo - r] * self.stencil[hi - r]) as f64)
            .sum()
    }
}

/// Which shape penalty accompanies the smoothness term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    NearlyUnimodal,
    NearlyConcave,
    None,
}

/// Tuning parameters of the penalized criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub shape: Shape,
}

impl PenaltyConfig {
    pub fn new(lambda1: f64, lambda2: f64, shape: Shape) -> Result<Self> {
        if !(lambda1 >= 0.0) || !lambda1.is_finite() {
            return param_err(format!("lambda1 must be finite and >= 0, got {lambda1}"));
        }
        if !(lambda2 > 0.0) || !lambda2.is_finite() {
            return param_err(format!("lambda2 must be finite and > 0, got {lambda2}"));
        }
        if shape == Shape::None && lambda1 > 0.0 {
            return param_err("lambda1 > 0 requires a shape penalty");
        }
        Ok(PenaltyConfig {
            lambda1,
            lambda2,
            shape,
        })
    }
}

/// `ρ_τ(a) = a (τ − 1{a < 0})`.
#[inline]
pub fn check_loss(a: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if a < 0.0 {
        a * (t - 1.0)
    } else {
        a * t
    }
}

/// Mean check loss of a residual vector.
pub fn mean_check_loss(residuals: ArrayView1<f64>, tau: QuantileLevel) -> f64 {
    residuals.iter().map(|&e| check_loss(e, tau)).sum::<f64>() / residuals.len() as f64
}

/// `|D x|^+`, the summed positive parts of `D x`.
pub fn pos_part(x: &[f64], d: &DifferenceOperator) -> Result<f64> {
    Ok(d.apply(x)?.iter().map(|v| v.max(0.0)).sum())
}

/// `|D x|^-`, the summed positive parts of `−D x`.
pub fn neg_part(x: &[f64], d: &DifferenceOperator) -> Result<f64> {
    Ok(d.apply(x)?.iter().map(|v| (-v).max(0.0)).sum())
}

/// Decreases before the mode plus increases after it, with the mode entry
/// excluded from the second segment.
pub fn unimodal_penalty(beta_k: &[f64], mode: usize) -> Result<f64> {
    if mode < 1 || mode > beta_k.len() {
        return param_err(format!("mode {mode} outside 1..={}", beta_k.len()));
    }
    Ok(unimodal_penalty_unchecked(beta_k, mode))
}

pub(crate) fn unimodal_penalty_unchecked(beta_k: &[f64], mode: usize) -> f64 {
    let (head, tail) = beta_k.split_at(mode);
    let rise: f64 = head.windows(2).map(|w| (w[0] - w[1]).max(0.0)).sum();
    let fall: f64 = tail.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum();
    rise + fall
}

/// Summed positive second differences; zero exactly for concave sequences.
pub fn concave_penalty(beta_k: &[f64]) -> Result<f64> {
    if beta_k.len() < 3 {
        return dim_err(format!(
            "concavity needs at least 3 points, got {}",
            beta_k.len()
        ));
    }
    Ok(concave_penalty_unchecked(beta_k))
}

pub(crate) fn concave_penalty_unchecked(beta_k: &[f64]) -> f64 {
    beta_k
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).max(0.0))
        .sum()
}

/// `Σ_k ‖D^(2) β_k‖²`.
pub fn smoothness_penalty(beta: &LagCoefficients) -> f64 {
    beta.as_array()
        .rows()
        .into_iter()
        .map(|row| {
            let r = row.as_slice().expect("standard layout");
            r.windows(3)
                .map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Shape penalty summed over exposures.
pub fn shape_penalty(
    beta: &LagCoefficients,
    shape: Shape,
    modes: Option<&ModeVector>,
) -> Result<f64> {
    match shape {
        Shape::None => Ok(0.0),
        Shape::NearlyConcave => Ok(beta
            .as_array()
            .rows()
            .into_iter()
            .map(|r| concave_penalty_unchecked(r.as_slice().expect("standard layout")))
            .sum()),
        Shape::NearlyUnimodal => {
            let Some(modes) = modes else {
                return param_err("the nearly-unimodal penalty requires modes");
            };
            if modes.len() != beta.dim().0 {
                return dim_err(format!(
                    "{} modes for {} exposures",
                    modes.len(),
                    beta.dim().0
                ));
            }
            let mut total = 0.0;
            for (row, &m) in beta.as_array().rows().into_iter().zip(modes.as_slice()) {
                total += unimodal_penalty(row.as_slice().expect("standard layout"), m)?;
            }
            Ok(total)
        }
    }
}

/// Penalized criterion: mean check loss plus `λ1` times the shape penalty plus
/// `λ2 Σ_k ‖D^(2) β_k‖²`.
pub fn objective(
    data: &RegressionData,
    beta: &LagCoefficients,
    gamma: &CovariateCoefficients,
    cfg: &PenaltyConfig,
    modes: Option<&ModeVector>,
    tau: QuantileLevel,
) -> Result<f64> {
    if cfg.shape == Shape::NearlyUnimodal && modes.is_none() {
        return param_err("the nearly-unimodal objective requires modes");
    }
    let resid = data.residuals(beta, gamma)?;
    let loss = mean_check_loss(resid.view(), tau);
    let shape = if cfg.lambda1 > 0.0 {
        cfg.lambda1 * shape_penalty(beta, cfg.shape, modes)?
    } else {
        0.0
    };
    Ok(loss + shape + cfg.lambda2 * smoothness_penalty(beta))
}
