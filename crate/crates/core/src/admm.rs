//! Prox-linear ADMM for penalized quantile regression with a quadratic
//! coefficient penalty and a nonsmooth penalty `g` that has an exact prox.
//!
//! The problem
//!
//! ```text
//! min (1/n) Σ ρ_τ(r_i) + λ1 g(B) + λq ‖Q B‖²   s.t.   r = y − X B − Z γ
//! ```
//!
//! is split over `(B, γ)`, `r` and the multiplier `u`. The quadratic penalty is
//! folded into an augmented design `X̃ = [X; √(2λq/ρ) Q]`, `γ` is profiled out
//! through the projection onto the column space of `Z`, and a proximal term
//! `½‖B − B^(t)‖²_S` with `S = ρ(η I − X̃_Zᵀ X̃_Z)` linearizes the remaining
//! coupling so that the coefficient step is a prox of `(λ1/ρη) g` at a
//! gradient point. `η` bounds the spectrum of `X̃_Zᵀ X̃_Z`, which makes the
//! step a majorize-minimize update of the profiled augmented Lagrangian.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, QdlagError, Result};
use crate::lagmodel::{
    check_loss, concave_penalty_unchecked, make_diff_operator, mean_check_loss, objective,
    unimodal_penalty_unchecked, CovariateCoefficients, LagCoefficients, ModeVector, PenaltyConfig,
    QuantileLevel, RegressionData, Shape,
};
use crate::linalg::{largest_eigenvalue, Cholesky};
use crate::prox::{
    prox_check, prox_unimodal_unchecked, soft_threshold, ConcaveProx, ConcaveWarmStart,
    ProxSettings,
};
use crate::unimodal::DescentDiagnostics;

/// Inflation applied to the power-iteration estimate of the largest eigenvalue.
const ETA_INFLATION: f64 = 1.01;
const RHO_SCALE: f64 = 30.0;
const POWER_ITER_TOL: f64 = 1e-6;
const POWER_ITER_MAX: usize = 20_000;

/// Which dimension enters the dual stopping threshold `√(·) ε1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DualThreshold {
    /// `√(T + p)`
    #[default]
    TimePlusCovariates,
    /// `√(KT + p)`, the column count of `W = (X, Z)`
    AllColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Augmented-Lagrangian step size. `None` picks a data-scaled value, see
    /// [`default_rho`].
    pub rho: Option<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
    /// Linearized proximal steps on the coefficient block per iteration.
    /// Each extra step costs one `KT x KT` product and never increases the
    /// augmented merit.
    pub beta_substeps: usize,
    pub prox: ProxSettings,
    pub dual_threshold: DualThreshold,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: None,
            eps1: 1e-4,
            eps2: 1e-4,
            max_iter: 20_000,
            beta_substeps: 4,
            prox: ProxSettings::default(),
            dual_threshold: DualThreshold::default(),
        }
    }
}

impl AdmmConfig {
    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(rho) = self.rho {
            if !(rho > 0.0) || !rho.is_finite() {
                return param_err(format!("rho must be positive and finite, got {rho}"));
            }
        }
        if !(self.eps1 > 0.0) || !(self.eps2 > 0.0) {
            return param_err("stopping tolerances must be positive");
        }
        if self.max_iter == 0 {
            return param_err("max_iter must be positive");
        }
        if self.beta_substeps == 0 {
            return param_err("beta_substeps must be positive");
        }
        self.prox.validate()
    }

    /// Step size actually used on `data`.
    pub fn resolve_rho(&self, data: &RegressionData, tau: QuantileLevel) -> f64 {
        self.rho.unwrap_or_else(|| default_rho(data, tau))
    }
}

/// Data-scaled step size `κ / (n · s)` with `κ = 30`, where `s` is the mean
/// absolute deviation of the response about its `τ`-quantile (at least `1e-8`).
///
/// At a solution the multipliers satisfy `u_i ∈ [(τ − 1)/n, τ/n]` while the
/// residuals live on the scale of the response; `1/(n s)` balances the two
/// blocks and makes the iterates equivariant under rescaling of `y`. The
/// factor `κ` trades iteration count against accuracy at the stopping rule.
pub fn default_rho(data: &RegressionData, tau: QuantileLevel) -> f64 {
    let y = data.response();
    let mut sorted: Vec<f64> = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = quantile_sorted(&sorted, tau.value());
    let spread = y.iter().map(|v| (v - q).abs()).sum::<f64>() / y.len() as f64;
    RHO_SCALE / (y.len() as f64 * spread.max(1e-8))
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Operator inside the quadratic penalty `λq ‖Q B‖²`, applied per lag curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadraticOperator {
    /// second differences `D^(2)` along time
    SecondDifference,
    Identity,
}

/// Nonsmooth coefficient penalty `g`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefPenalty {
    None,
    /// `Σ_k h̄(β_k; M_k)` with the given modes
    Unimodal(ModeVector),
    /// `Σ_k |D^(2) β_k|^+`
    Concave,
    /// `Σ_k ‖β_k‖₁`
    Lasso,
}

impl CoefPenalty {
    pub fn evaluate(&self, beta: &[f64], k: usize, t: usize) -> f64 {
        (0..k)
            .map(|j| {
                let row = &beta[j * t..(j + 1) * t];
                match self {
                    CoefPenalty::None => 0.0,
                    CoefPenalty::Unimodal(m) => unimodal_penalty_unchecked(row, m.as_slice()[j]),
                    CoefPenalty::Concave => concave_penalty_unchecked(row),
                    CoefPenalty::Lasso => row.iter().map(|v| v.abs()).sum(),
                }
            })
            .sum()
    }

    pub fn modes(&self) -> Option<&ModeVector> {
        match self {
            CoefPenalty::Unimodal(m) => Some(m),
            _ => None,
        }
    }
}

/// Augmented design for a fixed dataset, quadratic penalty and step size.
///
/// Only the blocks the iteration needs are stored: the projected exposure
/// design `(I − P_Z) X` and the Gram matrix `X̃_Zᵀ X̃_Z`. The stacked matrices
/// `X̃`, `Z̃`, `ỹ` are available on demand.
#[derive(Debug, Clone)]
pub struct AugmentedProblem {
    n: usize,
    k: usize,
    t: usize,
    p: usize,
    rho: f64,
    quad_op: QuadraticOperator,
    quad_weight: f64,
    /// `√(2 λq / ρ)`
    aug_scale: f64,
    /// `(I − P_Z) X`, `n × KT`
    x_proj: Array2<f64>,
    /// contiguous transposes of `x_proj`, `X` and `Z` for the `Aᵀv` products
    x_proj_t: Array2<f64>,
    x_t: Array2<f64>,
    z_t: Array2<f64>,
    /// cross products `XᵀX`, `XᵀZ`, `ZᵀX`, `ZᵀZ`, which update `Wᵀu` without
    /// touching the `n`-length design
    xtx: Array2<f64>,
    xtz: Array2<f64>,
    ztx: Array2<f64>,
    ztz: Array2<f64>,
    /// `(ZᵀZ)⁻¹ZᵀX`, so that `X_Zᵀv = Xᵀv − coefᵀZᵀv`
    z_coef: Array2<f64>,
    /// `X̃_Zᵀ X̃_Z`, `KT × KT`
    gram: Array2<f64>,
    eta: f64,
    z: Array2<f64>,
    x: Array2<f64>,
    y: Array1<f64>,
    gram_z: Option<Cholesky>,
}

/// Builds the augmented problem for the second-difference smoothness penalty.
pub fn build_augmented(data: &RegressionData, lambda2: f64, rho: f64) -> Result<AugmentedProblem> {
    if !(lambda2 > 0.0) {
        return param_err(format!("lambda2 must be positive, got {lambda2}"));
    }
    AugmentedProblem::new(data, QuadraticOperator::SecondDifference, lambda2, rho)
}

impl AugmentedProblem {
    pub fn new(
        data: &RegressionData,
        quad_op: QuadraticOperator,
        quad_weight: f64,
        rho: f64,
    ) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return param_err(format!("rho must be positive and finite, got {rho}"));
        }
        if !(quad_weight >= 0.0) || !quad_weight.is_finite() {
            return param_err(format!(
                "quadratic weight must be finite and >= 0, got {quad_weight}"
            ));
        }
        let (n, k, t, p) = (data.n(), data.k(), data.t(), data.p());
        let x = data.exposures().to_owned();
        let z = data.covariates().to_owned();
        let gram_z = if p > 0 {
            Some(Cholesky::factor(z.t().dot(&z).view())?)
        } else {
            None
        };
        let mut x_proj = x.clone();
        let ztx = z.t().dot(&x);
        let mut z_coef = Array2::<f64>::zeros((p, k * t));
        if let Some(chol) = &gram_z {
            for (j, col) in ztx.axis_iter(Axis(1)).enumerate() {
                z_coef.column_mut(j).assign(&chol.solve(col));
            }
            x_proj -= &z.dot(&z_coef);
        }
        let aug_scale = (2.0 * quad_weight / rho).sqrt();
        let mut gram = x_proj.t().dot(&x_proj);
        let c2 = aug_scale * aug_scale;
        if c2 > 0.0 {
            match quad_op {
                QuadraticOperator::Identity => {
                    for i in 0..k * t {
                        gram[[i, i]] += c2;
                    }
                }
                QuadraticOperator::SecondDifference => {
                    let d = make_diff_operator(2, t)?;
                    for blk in 0..k {
                        let off = blk * t;
                        for i in 0..t {
                            for j in i.saturating_sub(2)..(i + 3).min(t) {
                                gram[[off + i, off + j]] += c2 * d.gram_entry(i, j);
                            }
                        }
                    }
                }
            }
        }
        let eta = ETA_INFLATION * largest_eigenvalue(gram.view(), POWER_ITER_TOL, POWER_ITER_MAX);
        Ok(AugmentedProblem {
            n,
            k,
            t,
            p,
            rho,
            quad_op,
            quad_weight,
            aug_scale,
            x_proj_t: x_proj.t().as_standard_layout().into_owned(),
            x_t: x.t().as_standard_layout().into_owned(),
            z_t: z.t().as_standard_layout().into_owned(),
            xtx: x.t().dot(&x),
            xtz: ztx.t().as_standard_layout().into_owned(),
            ztz: z.t().dot(&z),
            ztx,
            z_coef,
            x_proj,
            gram,
            // a zero design leaves the gradient step inert; any positive η works
            eta: if eta > 0.0 { eta } else { 1.0 },
            z,
            x,
            y: data.response().to_owned(),
            gram_z,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn quad_weight(&self) -> f64 {
        self.quad_weight
    }
    pub fn quad_operator(&self) -> QuadraticOperator {
        self.quad_op
    }
    /// Rows of the augmented design, `n + (rows of Q)·K`.
    pub fn augmented_rows(&self) -> usize {
        self.n + self.k * self.quad_rows()
    }
    fn quad_rows(&self) -> usize {
        match self.quad_op {
            QuadraticOperator::SecondDifference => self.t - 2,
            QuadraticOperator::Identity => self.t,
        }
    }
    pub fn x_proj(&self) -> &Array2<f64> {
        &self.x_proj
    }
    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// `X̃ = [X; √(2λq/ρ) Q]` with `Q` block diagonal over exposures.
    pub fn x_tilde(&self) -> Array2<f64> {
        let kt = self.k * self.t;
        let mut m = Array2::<f64>::zeros((self.augmented_rows(), kt));
        m.slice_mut(ndarray::s![..self.n, ..]).assign(&self.x);
        let qr = self.quad_rows();
        for blk in 0..self.k {
            for r in 0..qr {
                let row = self.n + blk * qr + r;
                match self.quad_op {
                    QuadraticOperator::Identity => m[[row, blk * self.t + r]] = self.aug_scale,
                    QuadraticOperator::SecondDifference => {
                        for (i, c) in [1.0, -2.0, 1.0].iter().enumerate() {
                            m[[row, blk * self.t + r + i]] = self.aug_scale * c;
                        }
                    }
                }
            }
        }
        m
    }

    /// `Z̃ = [Z; 0]`.
    pub fn z_tilde(&self) -> Array2<f64> {
        let mut m = Array2::<f64>::zeros((self.augmented_rows(), self.p));
        m.slice_mut(ndarray::s![..self.n, ..]).assign(&self.z);
        m
    }

    /// `ỹ = [y; 0]`.
    pub fn y_tilde(&self) -> Array1<f64> {
        let mut v = Array1::<f64>::zeros(self.augmented_rows());
        v.slice_mut(ndarray::s![..self.n]).assign(&self.y);
        v
    }

    /// `(I − P_Z) w` for an `n`-vector.
    fn residualize(&self, w: ArrayView1<f64>) -> Array1<f64> {
        match &self.gram_z {
            None => w.to_owned(),
            Some(chol) => {
                let coef = chol.solve(self.z_t.dot(&w).view());
                &w - &self.z.dot(&coef)
            }
        }
    }

    /// `(I − P_Z̃) v` for a vector of the augmented length.
    pub fn project_complement(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.augmented_rows() {
            return dim_err(format!(
                "expected augmented length {}, got {}",
                self.augmented_rows(),
                v.len()
            ));
        }
        let mut out = v.to_owned();
        let top = self.residualize(v.slice(ndarray::s![..self.n]));
        out.slice_mut(ndarray::s![..self.n]).assign(&top);
        Ok(out)
    }

    /// `‖Q B‖²` summed over exposures.
    fn quad_norm_sq(&self, b: &[f64]) -> f64 {
        let t = self.t;
        (0..self.k)
            .map(|blk| {
                let row = &b[blk * t..(blk + 1) * t];
                match self.quad_op {
                    QuadraticOperator::Identity => row.iter().map(|v| v * v).sum::<f64>(),
                    QuadraticOperator::SecondDifference => row
                        .windows(3)
                        .map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2))
                        .sum::<f64>(),
                }
            })
            .sum()
    }

    fn working_response(&self, state: &AdmmState) -> Array1<f64> {
        &self.y - &state.r + &(&state.u / self.rho)
    }

    /// Coefficient step: prox of `(λ1/ρη) g` at
    /// `s = B + η⁻¹ X̃_Zᵀ(t̄ − X̃_Z B)`.
    pub fn update_beta(
        &self,
        state: &AdmmState,
        lambda1: f64,
        penalty: &CoefPenalty,
        settings: &ProxSettings,
    ) -> Result<LagCoefficients> {
        let mut warm = vec![ConcaveWarmStart::default(); self.k];
        let concave = self.concave_prox(penalty, settings)?;
        let b = self.beta_step(
            state,
            lambda1,
            penalty,
            settings,
            concave.as_ref(),
            &mut warm,
        )?;
        LagCoefficients::from_flat(b.as_slice().expect("contiguous"), self.k, self.t)
    }

    fn concave_prox(
        &self,
        penalty: &CoefPenalty,
        settings: &ProxSettings,
    ) -> Result<Option<ConcaveProx>> {
        match penalty {
            CoefPenalty::Concave if self.k > 0 => Ok(Some(ConcaveProx::new(self.t, settings)?)),
            _ => Ok(None),
        }
    }

    fn beta_step(
        &self,
        state: &AdmmState,
        lambda1: f64,
        penalty: &CoefPenalty,
        settings: &ProxSettings,
        concave: Option<&ConcaveProx>,
        warm: &mut [ConcaveWarmStart],
    ) -> Result<Array1<f64>> {
        let b = state.beta.flat();
        if self.k == 0 {
            return Ok(b);
        }
        let tbar = self.residualize(self.working_response(state).view());
        let xpw = self.x_proj_t.dot(&tbar);
        self.beta_step_from(1, b, &xpw, lambda1, penalty, settings, concave, warm)
    }

    /// `X_Zᵀ w` for `w = y − r + u/ρ` from the products `Xᵀ·` and `Zᵀ·` of
    /// `y`, `r` and `u`.
    fn projected_xt_w(&self, y: &Products, r: &Products, u: &Products) -> Array1<f64> {
        let xw = &y.x - &r.x + &(&u.x / self.rho);
        let zw = &y.z - &r.z + &(&u.z / self.rho);
        xw - self.z_coef.t().dot(&zw)
    }

    /// Coefficient step from `X_Zᵀ w`.
    #[allow(clippy::too_many_arguments)]
    fn beta_step_from(
        &self,
        substeps: usize,
        b: Array1<f64>,
        xpw: &Array1<f64>,
        lambda1: f64,
        penalty: &CoefPenalty,
        settings: &ProxSettings,
        concave: Option<&ConcaveProx>,
        warm: &mut [ConcaveWarmStart],
    ) -> Result<Array1<f64>> {
        if self.k == 0 {
            return Ok(b);
        }
        let mut b = b;
        for _ in 0..substeps.max(1) {
            b = self.prox_gradient_step(&b, xpw, lambda1, penalty, settings, concave, warm)?;
        }
        Ok(b)
    }

    #[allow(clippy::too_many_arguments)]
    fn prox_gradient_step(
        &self,
        b: &Array1<f64>,
        xpw: &Array1<f64>,
        lambda1: f64,
        penalty: &CoefPenalty,
        settings: &ProxSettings,
        concave: Option<&ConcaveProx>,
        warm: &mut [ConcaveWarmStart],
    ) -> Result<Array1<f64>> {
        let grad = xpw - &self.gram.dot(b);
        let s = b + &(grad / self.eta);
        let weight = lambda1 / (self.rho * self.eta);
        let t = self.t;
        let mut out = Array1::<f64>::zeros(self.k * t);
        for blk in 0..self.k {
            let sk = &s.as_slice().expect("contiguous")[blk * t..(blk + 1) * t];
            let dst = &mut out.as_slice_mut().expect("contiguous")[blk * t..(blk + 1) * t];
            if weight == 0.0 {
                dst.copy_from_slice(sk);
                continue;
            }
            match penalty {
                CoefPenalty::None => dst.copy_from_slice(sk),
                CoefPenalty::Unimodal(modes) => {
                    dst.copy_from_slice(&prox_unimodal_unchecked(sk, modes.as_slice()[blk], weight))
                }
                CoefPenalty::Concave => {
                    let prox = concave.expect("concave prox prepared");
                    dst.copy_from_slice(&prox.prox(sk, weight, settings, Some(&mut warm[blk]))?)
                }
                CoefPenalty::Lasso => {
                    for (d, v) in dst.iter_mut().zip(sk) {
                        *d = soft_threshold(*v, weight);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `γ̂ = (ZᵀZ)⁻¹ Zᵀ (y − r + u/ρ − X B)` with `B` taken from `beta`.
    pub fn update_gamma(&self, state: &AdmmState, beta: &LagCoefficients) -> CovariateCoefficients {
        self.gamma_given_xb(state, self.x.dot(&beta.flat()).view())
    }

    fn gamma_given_xb(&self, state: &AdmmState, xb: ArrayView1<f64>) -> CovariateCoefficients {
        match &self.gram_z {
            None => CovariateCoefficients::zeros(0),
            Some(chol) => {
                let target = self.working_response(state) - xb;
                let g = chol.solve(self.z_t.dot(&target).view());
                CovariateCoefficients::new(g).expect("finite")
            }
        }
    }

    /// Profiled augmented Lagrangian
    /// `λ1 g(B) + (ρ/2)‖X̃_Z B − t̄‖² + f(r)` at the state's `(r, u)`.
    pub fn merit(
        &self,
        state: &AdmmState,
        beta: &[f64],
        xb: ArrayView1<f64>,
        lambda1: f64,
        penalty: &CoefPenalty,
        tau: QuantileLevel,
    ) -> f64 {
        let w = self.working_response(state);
        let resid = self.residualize((&xb - &w).view());
        let fit = resid.dot(&resid) + self.aug_scale.powi(2) * self.quad_norm_sq(beta);
        let g = if lambda1 > 0.0 {
            lambda1 * penalty.evaluate(beta, self.k, self.t)
        } else {
            0.0
        };
        g + 0.5 * self.rho * fit + mean_check_loss(state.r.view(), tau)
    }
}

/// `r_i = Prox_{ρ_τ/(nρ)}(y_i − x_iᵀB − z_iᵀγ + u_i/ρ)`.
pub fn update_r(
    fit: ArrayView1<f64>,
    y: ArrayView1<f64>,
    u: ArrayView1<f64>,
    tau: QuantileLevel,
    rho: f64,
) -> Array1<f64> {
    let alpha = y.len() as f64 * rho;
    let mut r = Array1::<f64>::zeros(y.len());
    for i in 0..y.len() {
        r[i] = prox_check(y[i] - fit[i] + u[i] / rho, tau, alpha);
    }
    r
}

/// `u ← u − ρ (X B + Z γ + r − y)`.
pub fn update_u(
    u: ArrayView1<f64>,
    fit: ArrayView1<f64>,
    r: ArrayView1<f64>,
    y: ArrayView1<f64>,
    rho: f64,
) -> Array1<f64> {
    let mut out = u.to_owned();
    for i in 0..out.len() {
        out[i] -= rho * (fit[i] + r[i] - y[i]);
    }
    out
}

/// Primal and dual residuals against their relative thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCheck {
    pub converged: bool,
    pub primal_resid: f64,
    pub dual_resid: f64,
    pub primal_threshold: f64,
    pub dual_threshold: f64,
}

/// Relative primal/dual residual test with `W = (X, Z)`.
#[allow(clippy::too_many_arguments)]
pub fn check_convergence(
    data: &RegressionData,
    fit: ArrayView1<f64>,
    r: ArrayView1<f64>,
    prev_r: ArrayView1<f64>,
    u: ArrayView1<f64>,
    rho: f64,
    config: &AdmmConfig,
) -> ConvergenceCheck {
    let dims = (data.k(), data.t(), data.p());
    convergence(
        data.exposures().t(),
        data.covariates().t(),
        dims,
        data.response(),
        fit,
        r,
        prev_r,
        u,
        rho,
        config,
    )
}

/// `(Xᵀv, Zᵀv)` for one `n`-vector `v`.
#[derive(Debug, Clone)]
struct Products {
    x: Array1<f64>,
    z: Array1<f64>,
}

impl Products {
    fn of(x_t: ArrayView2<f64>, z_t: ArrayView2<f64>, v: ArrayView1<f64>) -> Self {
        Products {
            x: x_t.dot(&v),
            z: z_t.dot(&v),
        }
    }

    fn norm(&self) -> f64 {
        (self.x.dot(&self.x) + self.z.dot(&self.z)).sqrt()
    }

    fn dist(&self, other: &Products) -> f64 {
        let dx = &self.x - &other.x;
        let dz = &self.z - &other.z;
        (dx.dot(&dx) + dz.dot(&dz)).sqrt()
    }
}

#[allow(clippy::too_many_arguments)]
fn convergence(
    x_t: ArrayView2<f64>,
    z_t: ArrayView2<f64>,
    dims: (usize, usize, usize),
    y: ArrayView1<f64>,
    fit: ArrayView1<f64>,
    r: ArrayView1<f64>,
    prev_r: ArrayView1<f64>,
    u: ArrayView1<f64>,
    rho: f64,
    config: &AdmmConfig,
) -> ConvergenceCheck {
    let dual = rho * Products::of(x_t, z_t, r).dist(&Products::of(x_t, z_t, prev_r));
    let wtu = Products::of(x_t, z_t, u).norm();
    convergence_from(dims, y, fit, r, dual, wtu, config)
}

/// Stopping rule given the dual residual `ρ‖Wᵀ(r − r_prev)‖` and `‖Wᵀu‖`.
fn convergence_from(
    (k, t, p): (usize, usize, usize),
    y: ArrayView1<f64>,
    fit: ArrayView1<f64>,
    r: ArrayView1<f64>,
    dual: f64,
    wtu: f64,
    config: &AdmmConfig,
) -> ConvergenceCheck {
    let n = y.len() as f64;
    let norm = |v: &Array1<f64>| v.dot(v).sqrt();
    let constraint = &fit + &r - y;
    let primal = norm(&constraint);
    let scale = norm(&fit.to_owned())
        .max(norm(&r.to_owned()))
        .max(norm(&y.to_owned()));
    let primal_threshold = scaled(config.eps1, n.sqrt()) + scaled(config.eps2, scale);

    let dim = match config.dual_threshold {
        DualThreshold::TimePlusCovariates => t + p,
        DualThreshold::AllColumns => k * t + p,
    } as f64;
    let dual_threshold = scaled(config.eps1, dim.sqrt()) + scaled(config.eps2, wtu);
    ConvergenceCheck {
        converged: primal <= primal_threshold && dual <= dual_threshold,
        primal_resid: primal,
        dual_resid: dual,
        primal_threshold,
        dual_threshold,
    }
}

/// `eps · x` with `∞ · 0 = 0`.
fn scaled(eps: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        eps * x
    }
}

/// Primal and dual iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub beta: LagCoefficients,
    pub gamma: CovariateCoefficients,
    pub r: Array1<f64>,
    pub u: Array1<f64>,
    pub iter: usize,
    pub primal_resid: f64,
    pub dual_resid: f64,
}

impl AdmmState {
    /// `β = 0, γ = 0, r = y, u = 0`, which satisfies the constraint.
    pub fn initial(data: &RegressionData) -> Self {
        AdmmState {
            beta: LagCoefficients::zeros(data.k(), data.t()),
            gamma: CovariateCoefficients::zeros(data.p()),
            r: data.response().to_owned(),
            u: Array1::zeros(data.n()),
            iter: 0,
            primal_resid: 0.0,
            dual_resid: 0.0,
        }
    }

    fn compatible(&self, data: &RegressionData) -> bool {
        self.beta.dim() == (data.k(), data.t())
            && self.gamma.len() == data.p()
            && self.r.len() == data.n()
            && self.u.len() == data.n()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub primal_resid: f64,
    pub dual_resid: f64,
    /// profiled augmented Lagrangian at `(r^(t), B^(t), u^(t))`
    pub merit_before: f64,
    /// same, after the coefficient step
    pub merit_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: LagCoefficients,
    pub gamma: CovariateCoefficients,
    pub modes: Option<ModeVector>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    /// final iterate, usable as a warm start
    pub state: AdmmState,
    /// outer-loop record of the nearly-unimodal descent
    pub descent: Option<DescentDiagnostics>,
}

/// Solver bound to one dataset and quadratic penalty; reusable across values of
/// `λ1`, shape penalties, modes and warm starts.
#[derive(Debug, Clone)]
pub struct AdmmSolver<'a> {
    data: &'a RegressionData,
    problem: AugmentedProblem,
    tau: QuantileLevel,
    config: AdmmConfig,
}

impl<'a> AdmmSolver<'a> {
    pub fn new(
        data: &'a RegressionData,
        tau: QuantileLevel,
        quad_op: QuadraticOperator,
        quad_weight: f64,
        config: AdmmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let rho = config.resolve_rho(data, tau);
        let problem = AugmentedProblem::new(data, quad_op, quad_weight, rho)?;
        Ok(AdmmSolver {
            data,
            problem,
            tau,
            config,
        })
    }

    /// Solver for the smoothness penalty `λ2 Σ_k ‖D^(2) β_k‖²`.
    pub fn smooth(
        data: &'a RegressionData,
        tau: QuantileLevel,
        lambda2: f64,
        config: AdmmConfig,
    ) -> Result<Self> {
        if !(lambda2 > 0.0) {
            return param_err(format!("lambda2 must be positive, got {lambda2}"));
        }
        Self::new(
            data,
            tau,
            QuadraticOperator::SecondDifference,
            lambda2,
            config,
        )
    }

    /// Same data and quadratic penalty under other iteration settings; the
    /// augmented problem is reused when the step size is unchanged.
    pub fn with_config(&self, config: AdmmConfig) -> Result<Self> {
        config.validate()?;
        let rho = config.resolve_rho(self.data, self.tau);
        let problem = if rho == self.problem.rho {
            self.problem.clone()
        } else {
            AugmentedProblem::new(
                self.data,
                self.problem.quad_op,
                self.problem.quad_weight,
                rho,
            )?
        };
        Ok(AdmmSolver {
            data: self.data,
            problem,
            tau: self.tau,
            config,
        })
    }

    pub fn problem(&self) -> &AugmentedProblem {
        &self.problem
    }
    pub fn data(&self) -> &RegressionData {
        self.data
    }
    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }
    pub fn tau(&self) -> QuantileLevel {
        self.tau
    }

    /// Penalized criterion for this solver's penalties.
    pub fn objective(
        &self,
        beta: &LagCoefficients,
        gamma: &CovariateCoefficients,
        lambda1: f64,
        penalty: &CoefPenalty,
    ) -> Result<f64> {
        let resid = self.data.residuals(beta, gamma)?;
        let flat = beta.flat();
        let flat = flat.as_slice().expect("contiguous");
        let g = if lambda1 > 0.0 {
            lambda1 * penalty.evaluate(flat, self.data.k(), self.data.t())
        } else {
            0.0
        };
        Ok(mean_check_loss(resid.view(), self.tau)
            + g
            + self.problem.quad_weight * self.problem.quad_norm_sq(flat))
    }

    /// Runs the iteration from `init` (or the default start) until the
    /// residual test passes or `max_iter` is reached. Hitting the cap is
    /// reported through `converged = false`, not as an error.
    pub fn fit(
        &self,
        lambda1: f64,
        penalty: &CoefPenalty,
        init: Option<&AdmmState>,
    ) -> Result<FitResult> {
        self.fit_with_cap(lambda1, penalty, init, self.config.max_iter)
    }

    pub fn fit_with_cap(
        &self,
        lambda1: f64,
        penalty: &CoefPenalty,
        init: Option<&AdmmState>,
        max_iter: usize,
    ) -> Result<FitResult> {
        if !(lambda1 >= 0.0) || !lambda1.is_finite() {
            return param_err(format!("lambda1 must be finite and >= 0, got {lambda1}"));
        }
        let data = self.data;
        let (k, t) = (data.k(), data.t());
        if let CoefPenalty::Unimodal(m) = penalty {
            if m.len() != k {
                return dim_err(format!("{} modes for {k} exposures", m.len()));
            }
            if m.as_slice().iter().any(|&v| v > t) {
                return param_err("mode exceeds T");
            }
        }
        if matches!(penalty, CoefPenalty::Concave) && t < 3 {
            return dim_err("concave penalty needs T >= 3");
        }
        let mut state = match init {
            Some(s) if s.compatible(data) => AdmmState {
                iter: 0,
                ..s.clone()
            },
            Some(_) => return dim_err("warm start does not match the data dimensions"),
            None => AdmmState::initial(data),
        };
        let problem = &self.problem;
        let rho = problem.rho;
        let y = data.response();
        let settings = self.config.prox;
        let concave = problem.concave_prox(penalty, &settings)?;
        let mut warm = vec![ConcaveWarmStart::default(); k];
        let mut trace = Vec::new();
        let mut xb = data.exposures().dot(&state.beta.flat());
        let mut converged = false;
        let (x_t, z_t) = (problem.x_t.view(), problem.z_t.view());
        let wty = Products::of(x_t, z_t, y);
        let mut wtr = Products::of(x_t, z_t, state.r.view());
        let mut wtu = Products::of(x_t, z_t, state.u.view());

        for it in 1..=max_iter {
            let b_old = state.beta.flat();
            let merit_before = problem.merit(
                &state,
                b_old.as_slice().expect("contiguous"),
                xb.view(),
                lambda1,
                penalty,
                self.tau,
            );
            let xpw = problem.projected_xt_w(&wty, &wtr, &wtu);
            let b_new = problem.beta_step_from(
                self.config.beta_substeps,
                b_old.clone(),
                &xpw,
                lambda1,
                penalty,
                &settings,
                concave.as_ref(),
                &mut warm,
            )?;
            let beta_new = LagCoefficients::from_flat(b_new.as_slice().expect("contiguous"), k, t)?;
            let xb_new = data.exposures().dot(&b_new);
            let merit_after = problem.merit(
                &state,
                b_new.as_slice().expect("contiguous"),
                xb_new.view(),
                lambda1,
                penalty,
                self.tau,
            );
            let gamma_new = problem.gamma_given_xb(&state, xb_new.view());
            let fit = &xb_new + &data.covariates().dot(gamma_new.as_array());
            let r_new = update_r(fit.view(), y, state.u.view(), self.tau, rho);
            let u_new = update_u(state.u.view(), fit.view(), r_new.view(), y, rho);
            let wtr_new = Products::of(x_t, z_t, r_new.view());
            // Wᵀu_new = Wᵀu − ρ Wᵀ(fit + r_new − y), with Wᵀfit from the cross products
            let g = gamma_new.as_array();
            let wtu_new = Products {
                x: &wtu.x
                    - &((problem.xtx.dot(&b_new) + problem.xtz.dot(g) + &wtr_new.x - &wty.x) * rho),
                z: &wtu.z
                    - &((problem.ztx.dot(&b_new) + problem.ztz.dot(g) + &wtr_new.z - &wty.z) * rho),
            };
            let check = convergence_from(
                (k, t, data.p()),
                y,
                fit.view(),
                r_new.view(),
                rho * wtr_new.dist(&wtr),
                wtu_new.norm(),
                &self.config,
            );
            wtr = wtr_new;
            wtu = wtu_new;

            let objective_value = {
                let loss = y
                    .iter()
                    .zip(fit.iter())
                    .map(|(yi, fi)| check_loss(yi - fi, self.tau))
                    .sum::<f64>()
                    / y.len() as f64;
                let g = if lambda1 > 0.0 {
                    lambda1 * penalty.evaluate(b_new.as_slice().expect("contiguous"), k, t)
                } else {
                    0.0
                };
                loss + g
                    + problem.quad_weight
                        * problem.quad_norm_sq(b_new.as_slice().expect("contiguous"))
            };
            trace.push(TraceEntry {
                iter: it,
                objective: objective_value,
                primal_resid: check.primal_resid,
                dual_resid: check.dual_resid,
                merit_before,
                merit_after,
            });
            state = AdmmState {
                beta: beta_new,
                gamma: gamma_new,
                r: r_new,
                u: u_new,
                iter: it,
                primal_resid: check.primal_resid,
                dual_resid: check.dual_resid,
            };
            xb = xb_new;
            if check.converged {
                converged = true;
                break;
            }
        }
        let objective = self.objective(&state.beta, &state.gamma, lambda1, penalty)?;
        Ok(FitResult {
            beta: state.beta.clone(),
            gamma: state.gamma.clone(),
            modes: penalty.modes().cloned(),
            objective,
            converged,
            iterations: state.iter,
            trace,
            state,
            descent: None,
        })
    }
}

/// Fits the shape-penalized criterion for fixed modes (when unimodal).
pub fn admm_fit(
    data: &RegressionData,
    tau: QuantileLevel,
    cfg: &PenaltyConfig,
    modes: Option<&ModeVector>,
    config: &AdmmConfig,
    init: Option<&AdmmState>,
) -> Result<FitResult> {
    let penalty = shape_to_penalty(cfg.shape, modes)?;
    let solver = AdmmSolver::smooth(data, tau, cfg.lambda2, *config)?;
    let result = solver.fit(cfg.lambda1, &penalty, init)?;
    debug_assert!({
        let direct = objective(
            data,
            &result.beta,
            &result.gamma,
            cfg,
            result.modes.as_ref(),
            tau,
        )?;
        (direct - result.objective).abs() <= 1e-10 * (1.0 + direct.abs())
    });
    Ok(result)
}

pub(crate) fn shape_to_penalty(shape: Shape, modes: Option<&ModeVector>) -> Result<CoefPenalty> {
    Ok(match shape {
        Shape::None => CoefPenalty::None,
        Shape::NearlyConcave => CoefPenalty::Concave,
        Shape::NearlyUnimodal => match modes {
            Some(m) => CoefPenalty::Unimodal(m.clone()),
            None => {
                return Err(QdlagError::InvalidParameter(
                    "the nearly-unimodal penalty requires modes".into(),
                ))
            }
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tau(v: f64) -> QuantileLevel {
        QuantileLevel::new(v).unwrap()
    }

    fn small_data() -> RegressionData {
        let x = array![[1.0, 0.5, -0.2], [0.3, -1.0, 0.8]];
        let z = array![[1.0], [1.0]];
        RegressionData::from_flat(x, 1, 3, z, array![1.0, 2.0], None).unwrap()
    }

    #[test]
    fn augmented_dimensions() {
        let data = small_data();
        let prob = build_augmented(&data, 0.5, 1.0).unwrap();
        assert_eq!(prob.augmented_rows(), 3);
        assert_eq!(prob.x_tilde().dim(), (3, 3));
        assert_eq!(prob.z_tilde().dim(), (3, 1));
        assert_eq!(prob.y_tilde().to_vec(), vec![1.0, 2.0, 0.0]);
        let row = prob.x_tilde().row(2).to_vec();
        assert!(
            (row[0] - 1.0).abs() < 1e-15
                && (row[1] + 2.0).abs() < 1e-15
                && (row[2] - 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn doubling_lambda2_and_rho_keeps_x_tilde() {
        let data = small_data();
        let a = build_augmented(&data, 0.5, 1.0).unwrap();
        let b = build_augmented(&data, 1.0, 2.0).unwrap();
        assert_eq!(a.x_tilde(), b.x_tilde());
    }

    #[test]
    fn projector_complement_on_intercept() {
        let data = small_data();
        let prob = build_augmented(&data, 0.5, 1.0).unwrap();
        let v = prob
            .project_complement(array![3.0, 5.0, 7.0].view())
            .unwrap();
        assert!((v[0] + 1.0).abs() < 1e-14 && (v[1] - 1.0).abs() < 1e-14 && v[2] == 7.0);
        let ones = prob
            .project_complement(array![1.0, 1.0, 0.0].view())
            .unwrap();
        assert!(ones.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn eta_dominates_gram_spectrum() {
        let data = small_data();
        let prob = build_augmented(&data, 0.7, 0.3).unwrap();
        let g = prob.gram();
        // Gershgorin-free check: vᵀGv ≤ η‖v‖² on random directions
        for s in 0..50 {
            let v: Vec<f64> = (0..3).map(|i| ((s * 7 + i * 13) as f64).sin()).collect();
            let v = Array1::from(v);
            assert!(v.dot(&g.dot(&v)) <= prob.eta() * v.dot(&v) + 1e-12);
        }
        let x_proj = prob.x_tilde();
        assert_eq!(x_proj.nrows(), 3);
    }

    #[test]
    fn rank_deficient_covariates_are_rejected() {
        let x = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let z = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let data = RegressionData::from_flat(x, 1, 3, z, array![1.0, 2.0, 3.0], None).unwrap();
        match build_augmented(&data, 1.0, 1.0) {
            Err(QdlagError::Singular { columns }) => assert_eq!(columns, vec![1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_update_is_mean_for_intercept_design() {
        let x = Array2::<f64>::zeros((3, 3));
        let z = Array2::<f64>::ones((3, 1));
        let data = RegressionData::from_flat(x, 1, 3, z, array![1.0, 2.0, 6.0], None).unwrap();
        let prob = build_augmented(&data, 1.0, 1.0).unwrap();
        let mut state = AdmmState::initial(&data);
        state.r.fill(0.0);
        let g = prob.update_gamma(&state, &state.beta);
        assert!((g.as_array()[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn gamma_update_without_covariates_is_empty() {
        let x = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let data =
            RegressionData::from_flat(x, 1, 3, Array2::zeros((2, 0)), array![1.0, 2.0], None)
                .unwrap();
        let prob = build_augmented(&data, 1.0, 1.0).unwrap();
        let state = AdmmState::initial(&data);
        assert!(prob.update_gamma(&state, &state.beta).is_empty());
    }

    #[test]
    fn r_and_u_updates() {
        let y = array![1.0, 0.0];
        let fit = array![0.0, 0.0];
        let u = array![0.0, 0.0];
        // n = 2, ρ = 0.5: nρ = 1
        let r = update_r(fit.view(), y.view(), u.view(), tau(0.5), 0.5);
        assert_eq!(r.to_vec(), vec![0.5, 0.0]);
        let perfect = update_r(y.view(), y.view(), u.view(), tau(0.3), 2.0);
        assert!(perfect.iter().all(|v| *v == 0.0));

        let feasible_r = &y - &fit;
        let u1 = update_u(u.view(), fit.view(), feasible_r.view(), y.view(), 0.5);
        assert_eq!(u1, u);
        let r_off = &feasible_r + 2.0;
        let u2 = update_u(u.view(), fit.view(), r_off.view(), y.view(), 0.5);
        assert_eq!(u2.to_vec(), vec![-1.0, -1.0]);
    }

    #[test]
    fn convergence_test_cases() {
        let data = small_data();
        let y = data.response().to_owned();
        let zero = Array1::<f64>::zeros(2);
        let cfg = AdmmConfig::default();
        let exact = check_convergence(
            &data,
            y.view(),
            zero.view(),
            zero.view(),
            zero.view(),
            1.0,
            &cfg,
        );
        assert!(exact.converged);
        assert_eq!((exact.primal_resid, exact.dual_resid), (0.0, 0.0));

        let first = check_convergence(
            &data,
            zero.view(),
            zero.view(),
            y.view(),
            zero.view(),
            1.0,
            &cfg,
        );
        assert!(!first.converged);

        let loose = AdmmConfig {
            eps1: f64::INFINITY,
            eps2: f64::INFINITY,
            ..cfg
        };
        let any = check_convergence(
            &data,
            zero.view(),
            zero.view(),
            y.view(),
            zero.view(),
            1.0,
            &loose,
        );
        assert!(any.converged);
    }

    #[test]
    fn beta_update_with_zero_design_is_prox_of_current() {
        let x = Array2::<f64>::zeros((2, 3));
        let data =
            RegressionData::from_flat(x, 1, 3, Array2::zeros((2, 0)), array![1.0, 2.0], None)
                .unwrap();
        let prob = AugmentedProblem::new(&data, QuadraticOperator::Identity, 0.0, 1.0).unwrap();
        let mut state = AdmmState::initial(&data);
        state.beta = LagCoefficients::from_flat(&[1.0, 0.0, 1.0], 1, 3).unwrap();
        let settings = ProxSettings::default();
        let b = prob
            .update_beta(&state, 10.0 * prob.eta(), &CoefPenalty::Concave, &settings)
            .unwrap();
        for v in b.as_array().iter() {
            assert!((v - 2.0 / 3.0).abs() < 1e-10);
        }
        let free = prob
            .update_beta(&state, 0.0, &CoefPenalty::Concave, &settings)
            .unwrap();
        assert_eq!(free, state.beta);
    }

    #[test]
    fn concave_current_point_is_fixed_without_gradient() {
        let x = Array2::<f64>::zeros((2, 4));
        let data =
            RegressionData::from_flat(x, 1, 4, Array2::zeros((2, 0)), array![0.0, 0.0], None)
                .unwrap();
        let prob = AugmentedProblem::new(&data, QuadraticOperator::Identity, 0.0, 1.0).unwrap();
        let mut state = AdmmState::initial(&data);
        state.beta = LagCoefficients::from_flat(&[-1.0, 1.0, 2.0, 2.5], 1, 4).unwrap();
        let b = prob
            .update_beta(&state, 3.0, &CoefPenalty::Concave, &ProxSettings::default())
            .unwrap();
        assert_eq!(b, state.beta);
    }

    #[test]
    fn unimodal_requires_modes() {
        assert!(shape_to_penalty(Shape::NearlyUnimodal, None).is_err());
        assert_eq!(
            shape_to_penalty(Shape::None, None).unwrap(),
            CoefPenalty::None
        );
    }

    #[test]
    fn default_rho_scales_inversely_with_response() {
        let data = small_data();
        let scaled = data
            .with_response(data.response().mapv(|v| 4.0 * v))
            .unwrap();
        let a = default_rho(&data, tau(0.3));
        let b = default_rho(&scaled, tau(0.3));
        assert!((a / b - 4.0).abs() < 1e-12);
    }
}
