//! Synthetic data: unimodal (A), sparse unimodal (B) and concave (C) lag
//! curves, AR(1) exposures, normal or t₄ errors at a target signal-to-noise
//! ratio.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{dim_err, param_err, Result};
use crate::lagmodel::{
    CovariateCoefficients, LagCoefficients, ModeVector, QuantileLevel, RegressionData,
};

/// Modes of the six reference lag curves on a 30-point grid.
pub const REFERENCE_MODES: [usize; 6] = [12, 15, 18, 17, 15, 13];

const AR_COEF: f64 = 0.8;
const THRESHOLD_B: f64 = 2.5;
const PEAK: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorLaw {
    Normal,
    StudentT4,
}

impl ErrorLaw {
    pub fn variance(self) -> f64 {
        match self {
            ErrorLaw::Normal => 1.0,
            ErrorLaw::StudentT4 => 2.0,
        }
    }

    pub fn quantile(self, tau: QuantileLevel) -> f64 {
        match self {
            ErrorLaw::Normal => Normal::new(0.0, 1.0)
                .expect("valid")
                .inverse_cdf(tau.value()),
            ErrorLaw::StudentT4 => StudentsT::new(0.0, 1.0, 4.0)
                .expect("valid")
                .inverse_cdf(tau.value()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub p: usize,
    pub model: Model,
    pub error: ErrorLaw,
    pub snr: f64,
    pub tau: QuantileLevel,
    pub modes: Vec<usize>,
    /// master seed: fixes the true coefficients
    pub seed: u64,
    /// selects the data stream under the master seed
    pub replicate: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 500,
            k: 6,
            t: 30,
            p: 5,
            model: Model::A,
            error: ErrorLaw::Normal,
            snr: 0.5,
            tau: QuantileLevel::new(0.25).expect("valid"),
            modes: REFERENCE_MODES.to_vec(),
            seed: 0,
            replicate: 0,
        }
    }
}

/// Reference modes rescaled to a `k × t` design: the reference pattern
/// repeats over exposures and is mapped proportionally onto `2..=t−1`.
pub fn default_modes(k: usize, t: usize) -> Vec<usize> {
    (0..k)
        .map(|j| {
            let m = REFERENCE_MODES[j % REFERENCE_MODES.len()];
            if t == 30 {
                m
            } else {
                let scaled = ((m as f64) * t as f64 / 30.0).round() as usize;
                scaled.clamp(2, t.saturating_sub(1).max(2))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub beta_star: LagCoefficients,
    pub gamma_star: CovariateCoefficients,
    pub sigma: f64,
    pub modes: ModeVector,
    /// `σ F_ε⁻¹(τ)`: gap between the conditional τ-quantile and the mean
    pub quantile_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub data: RegressionData,
    pub truth: SimTruth,
}

impl SimDataset {
    /// The data with an intercept column prepended, which absorbs the
    /// quantile shift.
    pub fn fitting_data(&self) -> RegressionData {
        self.data.with_intercept()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_modes(k: usize, t: usize, modes: &[usize]) -> Result<()> {
    if modes.len() != k {
        return dim_err(format!("{} modes for {k} exposures", modes.len()));
    }
    if t < 3 {
        return dim_err(format!("T must be at least 3, got {t}"));
    }
    if let Some(m) = modes.iter().find(|&&m| m < 2 || m + 1 > t) {
        return param_err(format!(
            "simulated modes must lie in 2..={}, got {m}",
            t - 1
        ));
    }
    Ok(())
}

/// Splits `total` into `steps` positive pieces proportional to uniform draws.
fn random_steps(rng: &mut ChaCha8Rng, steps: usize, total: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..steps)
        .map(|_| rng.random::<f64>() + f64::EPSILON)
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| total * v / sum).collect()
}

fn unimodal_row(rng: &mut ChaCha8Rng, t: usize, mode: usize) -> Vec<f64> {
    let mut row = vec![0.0; t];
    row[0] = -PEAK;
    let ups = random_steps(rng, mode - 1, 2.0 * PEAK);
    for i in 1..mode {
        row[i] = row[i - 1] + ups[i - 1];
    }
    row[mode - 1] = PEAK;
    let downs = random_steps(rng, t - mode, 2.0 * PEAK);
    for i in mode..t {
        row[i] = row[i - 1] - downs[i - mode];
    }
    row[t - 1] = -PEAK;
    row
}

fn concave_row(t: usize, mode: usize) -> Vec<f64> {
    (1..=t)
        .map(|i| {
            let x = if i <= mode {
                (i as f64 - mode as f64) / (mode as f64 - 1.0)
            } else {
                (i as f64 - mode as f64) / (t as f64 - mode as f64)
            };
            PEAK - 2.0 * PEAK * x * x
        })
        .collect()
}

/// True lag coefficients; reproducible from `seed`. Modes are 1-based and
/// must lie in `2..=T−1`.
pub fn gen_beta(
    model: Model,
    k: usize,
    t: usize,
    modes: &[usize],
    seed: u64,
) -> Result<LagCoefficients> {
    check_modes(k, t, modes)?;
    let mut rng = stream(seed, 0);
    truth_beta(model, k, t, modes, &mut rng)
}

fn truth_beta(
    model: Model,
    k: usize,
    t: usize,
    modes: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<LagCoefficients> {
    let mut flat = Vec::with_capacity(k * t);
    for &m in modes {
        let row = match model {
            Model::A => unimodal_row(rng, t, m),
            Model::B => unimodal_row(rng, t, m)
                .into_iter()
                .map(|v| if v.abs() > THRESHOLD_B { v } else { 0.0 })
                .collect(),
            Model::C => concave_row(t, m),
        };
        flat.extend(row);
    }
    LagCoefficients::from_flat(&flat, k, t)
}

fn exposures_into<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, t: usize) -> Array2<f64> {
    let innov = (1.0 - AR_COEF * AR_COEF).sqrt();
    let mut x = Array2::<f64>::zeros((n, k * t));
    for i in 0..n {
        for j in 0..k {
            let mut prev: f64 = rng.sample(StandardNormal);
            x[[i, j * t]] = prev;
            for m in 1..t {
                prev = AR_COEF * prev + innov * rng.sample::<f64, _>(StandardNormal);
                x[[i, j * t + m]] = prev;
            }
        }
    }
    x
}

/// `n` exposure matrices whose rows are stationary AR(1) paths with unit
/// variance and lag correlation `0.8^h`.
pub fn gen_exposures(n: usize, k: usize, t: usize, seed: u64) -> Vec<Array2<f64>> {
    let flat = exposures_into(&mut stream(seed, 0), n, k, t);
    flat.outer_iter()
        .map(|row| {
            row.to_owned()
                .into_shape_with_order((k, t))
                .expect("k·t entries")
        })
        .collect()
}

/// Draws one dataset. The truth depends only on `seed`; exposures,
/// covariates and raw errors depend on `(seed, replicate)`; `σ` is applied
/// last, so changing `snr` rescales the noise and nothing else.
pub fn gen_dataset(cfg: &SimConfig) -> Result<SimDataset> {
    if !(cfg.snr > 0.0) {
        return param_err(format!("snr must be positive, got {}", cfg.snr));
    }
    if cfg.n == 0 {
        return dim_err("n must be positive");
    }
    check_modes(cfg.k, cfg.t, &cfg.modes)?;
    let mut truth_rng = stream(cfg.seed, 0);
    let beta = truth_beta(cfg.model, cfg.k, cfg.t, &cfg.modes, &mut truth_rng)?;
    let gamma = Array1::from_iter((0..cfg.p).map(|_| truth_rng.sample::<f64, _>(StandardNormal)));

    let mut rng = stream(cfg.seed, cfg.replicate + 1);
    let x = exposures_into(&mut rng, cfg.n, cfg.k, cfg.t);
    let z = Array2::from_shape_fn((cfg.n, cfg.p), |_| rng.sample::<f64, _>(StandardNormal));
    let eps: Array1<f64> = match cfg.error {
        ErrorLaw::Normal => {
            Array1::from_iter((0..cfg.n).map(|_| rng.sample::<f64, _>(StandardNormal)))
        }
        ErrorLaw::StudentT4 => {
            let law = StudentT::new(4.0).expect("valid");
            Array1::from_iter((0..cfg.n).map(|_| law.sample(&mut rng)))
        }
    };
    let signal = x.dot(&beta.flat()) + z.dot(&gamma);
    let var_signal = signal.var(0.0);
    let sigma = (var_signal / (cfg.snr * cfg.error.variance())).sqrt();
    let y = &signal + &(eps * sigma);
    let data = RegressionData::from_flat(x, cfg.k, cfg.t, z, y, None)?;
    Ok(SimDataset {
        data,
        truth: SimTruth {
            beta_star: beta,
            gamma_star: CovariateCoefficients::new(gamma)?,
            sigma,
            modes: ModeVector::new(cfg.modes.clone(), cfg.t)?,
            quantile_shift: sigma * cfg.error.quantile(cfg.tau),
        },
    })
}

/// `‖β̂ − β*‖₂` over all entries.
pub fn estimation_error(beta_hat: &LagCoefficients, beta_star: &LagCoefficients) -> Result<f64> {
    if beta_hat.dim() != beta_star.dim() {
        return dim_err(format!(
            "shapes {:?} and {:?} differ",
            beta_hat.dim(),
            beta_star.dim()
        ));
    }
    let d = beta_hat.as_array() - beta_star.as_array();
    Ok(d.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagmodel::{concave_penalty, unimodal_penalty};

    #[test]
    fn model_a_endpoints_and_peak() {
        let b = gen_beta(Model::A, 6, 30, &REFERENCE_MODES, 4).unwrap();
        for (k, &m) in REFERENCE_MODES.iter().enumerate() {
            let row = b.row(k).to_vec();
            assert_eq!(row[0], -5.0);
            assert_eq!(row[m - 1], 5.0);
            assert_eq!(row[29], -5.0);
            assert_eq!(unimodal_penalty(&row, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn model_b_is_thresholded_a() {
        let a = gen_beta(Model::A, 6, 30, &REFERENCE_MODES, 4).unwrap();
        let b = gen_beta(Model::B, 6, 30, &REFERENCE_MODES, 4).unwrap();
        for (x, y) in a.as_array().iter().zip(b.as_array()) {
            assert!(*y == 0.0 || y.abs() > 2.5);
            assert!(*y == 0.0 || y == x);
        }
    }

    #[test]
    fn model_c_is_concave_with_calibrated_segments() {
        let b = gen_beta(Model::C, 6, 30, &REFERENCE_MODES, 0).unwrap();
        for (k, &m) in REFERENCE_MODES.iter().enumerate() {
            let row = b.row(k).to_vec();
            assert!((row[0] + 5.0).abs() < 1e-12 && (row[29] + 5.0).abs() < 1e-12);
            assert_eq!(row[m - 1], 5.0);
            assert!(concave_penalty(&row[..m]).unwrap() <= 1e-12);
            assert!(concave_penalty(&row[m - 1..]).unwrap() <= 1e-12);
            assert!(concave_penalty(&row).unwrap() <= 1e-12);
            assert_eq!(unimodal_penalty(&row, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn invalid_modes_rejected() {
        assert!(gen_beta(Model::A, 1, 5, &[1], 0).is_err());
        assert!(gen_beta(Model::A, 1, 5, &[5], 0).is_err());
        assert!(gen_beta(Model::A, 2, 5, &[3], 0).is_err());
    }

    #[test]
    fn error_norm_examples() {
        let a = LagCoefficients::zeros(6, 30);
        let b = LagCoefficients::new(Array2::ones((6, 30))).unwrap();
        assert_eq!(estimation_error(&a, &a).unwrap(), 0.0);
        assert!((estimation_error(&b, &a).unwrap() - 180f64.sqrt()).abs() < 1e-12);
        assert!(estimation_error(&a, &LagCoefficients::zeros(5, 30)).is_err());
    }

    #[test]
    fn default_mode_scaling() {
        assert_eq!(default_modes(6, 30), REFERENCE_MODES.to_vec());
        let m = default_modes(2, 10);
        assert_eq!(m, vec![4, 5]);
        assert!(default_modes(8, 3).iter().all(|&v| v == 2));
    }
}
