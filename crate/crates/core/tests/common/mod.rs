#![allow(dead_code)]

use ndarray::{Array1, Array2};
use qdlag::{QuantileLevel, RegressionData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tau(v: f64) -> QuantileLevel {
    QuantileLevel::new(v).unwrap()
}

/// Gaussian exposures and covariates; `intercept` makes the first covariate
/// column all ones. The response is a smooth bump per exposure plus noise.
pub fn random_data(
    seed: u64,
    n: usize,
    k: usize,
    t: usize,
    p: usize,
    intercept: bool,
) -> RegressionData {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, k * t), |_| r.sample::<f64, _>(StandardNormal));
    let z = Array2::from_shape_fn((n, p), |(_, j)| {
        if intercept && j == 0 {
            1.0
        } else {
            r.sample::<f64, _>(StandardNormal)
        }
    });
    let beta: Vec<f64> = (0..k * t)
        .map(|j| {
            let m = (j % t) as f64 / (t - 1).max(1) as f64;
            1.0 - 4.0 * (m - 0.4).powi(2)
        })
        .collect();
    let signal = x.dot(&Array1::from(beta));
    let y = Array1::from_iter(
        signal
            .iter()
            .map(|s| s + r.sample::<f64, _>(StandardNormal)),
    );
    RegressionData::from_flat(x, k, t, z, y, None).unwrap()
}

pub fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.random_range(lo..hi)
}

/// Mean absolute deviation of the response about its τ-quantile.
pub fn response_scale(data: &RegressionData, tau: QuantileLevel) -> f64 {
    let mut y = data.response().to_vec();
    y.sort_by(f64::total_cmp);
    let q = qdlag::bootstrap::empirical_quantile(&y, tau.value());
    y.iter().map(|v| (v - q).abs()).sum::<f64>() / y.len() as f64
}
