//! Proximal operator of `λ |D^(2) b|^+`:
//!
//! ```text
//! argmin_b ½‖s − b‖² + λ Σ_j max((D^(2) b)_j, 0)
//! ```
//!
//! The primary route solves the box-constrained dual
//! `min_{0 ≤ θ ≤ λ} ½‖D^(2)ᵀθ‖² − θᵀD^(2)s` with a primal-dual active-set
//! iteration, each step a banded solve on the free coordinates; `b = s − D^(2)ᵀθ`.
//! When the active set fails to settle the operator falls back to an ADMM
//! splitting `z = D^(2) b` with a cached banded factorization of
//! `I + σ D^(2)ᵀD^(2)`.

use crate::error::{QdlagError, Result};
use crate::lagmodel::{make_diff_operator, DifferenceOperator};
use crate::linalg::BandedLdl;

use super::ProxSettings;

const MAX_ACTIVE_SET_ITERS: usize = 60;

/// Dual variables kept between calls on the same lag curve.
#[derive(Debug, Clone, Default)]
pub struct ConcaveWarmStart {
    theta: Vec<f64>,
    lambda: f64,
}

/// Reusable nearly-concave prox for sequences of one length.
#[derive(Debug, Clone)]
pub struct ConcaveProx {
    len: usize,
    diff: DifferenceOperator,
    /// `I + σ DᵀD`, for the ADMM route
    system: BandedLdl,
    step: f64,
    /// correlation of the stencil with itself at lags 0, 1, 2 (entries of `DDᵀ`)
    dd_band: [f64; 3],
}

impl ConcaveProx {
    pub fn new(len: usize, settings: &ProxSettings) -> Result<Self> {
        if len < 3 {
            return Err(QdlagError::Dimension(format!(
                "concave prox needs length >= 3, got {len}"
            )));
        }
        settings.validate()?;
        let diff = make_diff_operator(2, len)?;
        let step = settings.inner_step;
        let system = BandedLdl::factor(len, 2, |i, j| {
            let g = diff.gram_entry(i, j);
            if i == j {
                1.0 + step * g
            } else {
                step * g
            }
        })?;
        let st = diff.stencil();
        let mut dd_band = [0.0; 3];
        for (lag, slot) in dd_band.iter_mut().enumerate() {
            *slot = (0..st.len().saturating_sub(lag))
                .map(|i| (st[i] * st[i + lag]) as f64)
                .sum();
        }
        Ok(ConcaveProx {
            len,
            diff,
            system,
            step,
            dd_band,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check_input(&self, s: &[f64], lambda: f64) -> Result<()> {
        if s.len() != self.len {
            return Err(QdlagError::Dimension(format!(
                "concave prox built for length {}, got {}",
                self.len,
                s.len()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(QdlagError::InvalidParameter(format!(
                "prox weight must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(())
    }

    /// Evaluates the prox, trying the active-set route first.
    pub fn prox(
        &self,
        s: &[f64],
        lambda: f64,
        settings: &ProxSettings,
        warm: Option<&mut ConcaveWarmStart>,
    ) -> Result<Vec<f64>> {
        self.check_input(s, lambda)?;
        if lambda == 0.0 {
            return Ok(s.to_vec());
        }
        let rows = self.len - 2;
        let ds = self.diff.apply(s)?;
        if ds.iter().all(|v| *v <= 0.0) {
            if let Some(w) = warm {
                w.theta = vec![0.0; rows];
                w.lambda = lambda;
            }
            return Ok(s.to_vec());
        }
        let mut theta0 = vec![0.0; rows];
        if let Some(w) = warm.as_deref() {
            if w.theta.len() == rows && w.lambda > 0.0 {
                let scale = lambda / w.lambda;
                for (t, v) in theta0.iter_mut().zip(&w.theta) {
                    *t = (v * scale).clamp(0.0, lambda);
                }
            }
        }
        let theta = match self.active_set(&ds, lambda, theta0, settings.inner_tol) {
            Some(theta) => theta,
            None => {
                let b = self.prox_admm(s, lambda, settings)?;
                if let Some(w) = warm {
                    let db = self.diff.apply(&b)?;
                    w.theta = db
                        .iter()
                        .map(|v| if *v > 0.0 { lambda } else { 0.0 })
                        .collect();
                    w.lambda = lambda;
                }
                return Ok(b);
            }
        };
        let mut b = s.to_vec();
        let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
        self.diff.add_transpose_into(&neg, &mut b);
        if let Some(w) = warm {
            w.theta = theta;
            w.lambda = lambda;
        }
        Ok(b)
    }

    /// Primal-dual active-set iteration on the box-constrained dual. Returns
    /// `None` if the active set cycles or the KKT check fails.
    fn active_set(
        &self,
        ds: &[f64],
        lambda: f64,
        mut theta: Vec<f64>,
        tol: f64,
    ) -> Option<Vec<f64>> {
        #[derive(Clone, Copy, PartialEq, Eq)]
        enum State {
            Lower,
            Upper,
            Free,
        }
        let rows = ds.len();
        let kappa = 1.0 / self.dd_band[0];
        let scale = 1.0 + ds.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut states = vec![State::Free; rows];
        let mut grad = vec![0.0; rows];
        for _ in 0..MAX_ACTIVE_SET_ITERS {
            self.dual_gradient(&theta, ds, &mut grad);
            let next: Vec<State> = theta
                .iter()
                .zip(&grad)
                .map(|(&t, &g)| {
                    let trial = t - kappa * g;
                    if trial <= 0.0 {
                        State::Lower
                    } else if trial >= lambda {
                        State::Upper
                    } else {
                        State::Free
                    }
                })
                .collect();
            let settled = next == states;
            states = next;
            if settled {
                // KKT: free coordinates interior, gradient signs on bounds
                let ok = (0..rows).all(|j| match states[j] {
                    State::Lower => grad[j] >= -tol * scale,
                    State::Upper => grad[j] <= tol * scale,
                    State::Free => {
                        theta[j] >= -tol * lambda.max(1.0)
                            && theta[j] <= lambda + tol * lambda.max(1.0)
                            && grad[j].abs() <= tol * scale
                    }
                });
                if ok {
                    for t in theta.iter_mut() {
                        *t = t.clamp(0.0, lambda);
                    }
                    return Some(theta);
                }
            }
            // solve the reduced system on free coordinates
            let free: Vec<usize> = (0..rows).filter(|&j| states[j] == State::Free).collect();
            for j in 0..rows {
                match states[j] {
                    State::Lower => theta[j] = 0.0,
                    State::Upper => theta[j] = lambda,
                    State::Free => {}
                }
            }
            if !free.is_empty() {
                let band = self.dd_band;
                let q = |a: usize, b: usize| -> f64 {
                    let lag = a.abs_diff(b);
                    if lag <= 2 {
                        band[lag]
                    } else {
                        0.0
                    }
                };
                let mut rhs: Vec<f64> = free
                    .iter()
                    .map(|&a| {
                        let mut r = ds[a];
                        let lo = a.saturating_sub(2);
                        let hi = (a + 2).min(rows - 1);
                        for b in lo..=hi {
                            if states[b] == State::Upper {
                                r -= q(a, b) * lambda;
                            }
                        }
                        r
                    })
                    .collect();
                let ldl = BandedLdl::factor(free.len(), 2, |i, j| q(free[i], free[j])).ok()?;
                ldl.solve_in_place(&mut rhs);
                for (idx, &a) in free.iter().enumerate() {
                    theta[a] = rhs[idx];
                }
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return None;
            }
        }
        None
    }

    /// `DDᵀθ − Ds`.
    fn dual_gradient(&self, theta: &[f64], ds: &[f64], out: &mut [f64]) {
        let rows = ds.len();
        let band = self.dd_band;
        for j in 0..rows {
            let mut g = band[0] * theta[j] - ds[j];
            if j >= 1 {
                g += band[1] * theta[j - 1];
            }
            if j >= 2 {
                g += band[2] * theta[j - 2];
            }
            if j + 1 < rows {
                g += band[1] * theta[j + 1];
            }
            if j + 2 < rows {
                g += band[2] * theta[j + 2];
            }
            out[j] = g;
        }
    }

    /// ADMM on `min ½‖s − b‖² + λ Σ max(z, 0)` subject to `z = D b`.
    pub fn prox_admm(&self, s: &[f64], lambda: f64, settings: &ProxSettings) -> Result<Vec<f64>> {
        self.check_input(s, lambda)?;
        if lambda == 0.0 {
            return Ok(s.to_vec());
        }
        let n = self.len;
        let rows = n - 2;
        let sigma = self.step;
        let thresh = lambda / sigma;
        let tol = settings.inner_tol;
        let mut b = s.to_vec();
        let mut z = self.diff.apply(s)?;
        let mut w = vec![0.0; rows];
        let mut db = vec![0.0; rows];
        let mut rhs = vec![0.0; n];
        let mut tmp = vec![0.0; rows];
        let mut dt = vec![0.0; n];
        let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
        for _ in 0..settings.inner_max_iter {
            rhs.copy_from_slice(s);
            for j in 0..rows {
                tmp[j] = sigma * (z[j] - w[j]);
            }
            self.diff.add_transpose_into(&tmp, &mut rhs);
            self.system.solve_in_place(&mut rhs);
            b.copy_from_slice(&rhs);
            self.diff.apply_into(&b, &mut db);

            let mut pr = 0.0;
            let mut zchange = vec![0.0; rows];
            for j in 0..rows {
                let v = db[j] + w[j];
                let znew = if v > thresh {
                    v - thresh
                } else if v >= 0.0 {
                    0.0
                } else {
                    v
                };
                zchange[j] = znew - z[j];
                z[j] = znew;
                w[j] += db[j] - znew;
                pr += (db[j] - znew).powi(2);
            }
            dt.iter_mut().for_each(|v| *v = 0.0);
            self.diff.add_transpose_into(&zchange, &mut dt);
            primal = pr.sqrt();
            dual = sigma * dt.iter().map(|v| v * v).sum::<f64>().sqrt();

            let norm_db = db.iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm_z = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            dt.iter_mut().for_each(|v| *v = 0.0);
            self.diff.add_transpose_into(&w, &mut dt);
            let norm_dw = sigma * dt.iter().map(|v| v * v).sum::<f64>().sqrt();
            let eps_pri = (rows as f64).sqrt() * tol + tol * norm_db.max(norm_z);
            let eps_dual = (n as f64).sqrt() * tol + tol * norm_dw;
            if primal <= eps_pri && dual <= eps_dual {
                return Ok(b);
            }
        }
        Err(QdlagError::InnerNonConvergence {
            iterations: settings.inner_max_iter,
            primal_resid: primal,
            dual_resid: dual,
            last_iterate: b,
        })
    }
}

/// One-shot nearly-concave prox.
pub fn prox_concave(s: &[f64], lambda: f64, settings: &ProxSettings) -> Result<Vec<f64>> {
    ConcaveProx::new(s.len(), settings)?.prox(s, lambda, settings, None)
}
