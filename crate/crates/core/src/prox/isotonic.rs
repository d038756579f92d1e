//! Exact solvers for monotone least squares: nearly-isotonic regression at a
//! fixed penalty level and classical pool-adjacent-violators.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Continuous, strictly increasing, piecewise-linear function given by knots
/// plus affine tails. Used as the derivative of the dynamic-programming value
/// function.
struct PiecewiseLinear {
    xs: Vec<f64>,
    fs: Vec<f64>,
    left_slope: f64,
    right_slope: f64,
}

impl PiecewiseLinear {
    /// Point `b` with `f(b) = v`.
    fn inverse(&self, v: f64) -> f64 {
        let last = self.xs.len() - 1;
        if v <= self.fs[0] {
            return self.xs[0] + (v - self.fs[0]) / self.left_slope;
        }
        if v >= self.fs[last] {
            return self.xs[last] + (v - self.fs[last]) / self.right_slope;
        }
        // fs is nondecreasing; find the segment holding v
        let j = self.fs.partition_point(|&f| f <= v) - 1;
        let (x0, x1, f0, f1) = (self.xs[j], self.xs[j + 1], self.fs[j], self.fs[j + 1]);
        if f1 <= f0 {
            x0
        } else {
            x0 + (v - f0) * (x1 - x0) / (f1 - f0)
        }
    }
}

/// Minimizes `½ Σ (y_i − b_i)² + λ Σ max(b_i − b_{i+1}, 0)` (for
/// [`Direction::Increasing`]) exactly.
///
/// Forward pass: the derivative of the partial value function stays
/// piecewise linear; minimizing out the previous coordinate clamps it to
/// `[−λ, 0]`. Backward pass recovers each coordinate from the clamp bounds.
/// `O(m²)` in the worst case, which is negligible for lag-curve lengths.
///
/// [`Direction::Decreasing`] penalizes `max(b_{i+1} − b_i, 0)` and is solved by
/// negation. `λ = +∞` yields the isotonic fit.
pub fn nearly_isotonic(y: &[f64], lambda: f64, direction: Direction) -> Vec<f64> {
    match direction {
        Direction::Increasing => nearly_isotonic_increasing(y, lambda),
        Direction::Decreasing => {
            let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
            nearly_isotonic_increasing(&flipped, lambda)
                .into_iter()
                .map(|v| -v)
                .collect()
        }
    }
}

fn nearly_isotonic_increasing(y: &[f64], lambda: f64) -> Vec<f64> {
    let m = y.len();
    if m <= 1 || lambda <= 0.0 {
        return y.to_vec();
    }
    if lambda.is_infinite() {
        return isotonic_regression(y, None, Direction::Increasing);
    }
    let mut f = PiecewiseLinear {
        xs: vec![y[0]],
        fs: vec![0.0],
        left_slope: 1.0,
        right_slope: 1.0,
    };
    let mut lo = vec![0.0; m - 1];
    let mut hi = vec![0.0; m - 1];
    for i in 0..(m - 1) {
        let top = f.inverse(0.0);
        let bottom = f.inverse(-lambda).min(top);
        lo[i] = bottom;
        hi[i] = top;

        let mut xs = Vec::with_capacity(f.xs.len() + 2);
        let mut fs = Vec::with_capacity(f.xs.len() + 2);
        xs.push(bottom);
        fs.push(-lambda);
        for (x, v) in f.xs.iter().zip(&f.fs) {
            if *x > bottom && *x < top {
                xs.push(*x);
                fs.push(*v);
            }
        }
        xs.push(top);
        fs.push(0.0);

        let yi = y[i + 1];
        for (x, v) in xs.iter().zip(fs.iter_mut()) {
            *v += x - yi;
        }
        f = PiecewiseLinear {
            xs,
            fs,
            left_slope: 1.0,
            right_slope: 1.0,
        };
    }
    let mut b = vec![0.0; m];
    b[m - 1] = f.inverse(0.0);
    for i in (0..(m - 1)).rev() {
        b[i] = b[i + 1].max(lo[i]).min(hi[i]);
    }
    b
}

/// Weighted pool-adjacent-violators fit.
pub fn isotonic_regression(y: &[f64], weights: Option<&[f64]>, direction: Direction) -> Vec<f64> {
    let sign = match direction {
        Direction::Increasing => 1.0,
        Direction::Decreasing => -1.0,
    };
    // blocks of (weighted mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (i, v) in y.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        blocks.push((sign * v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().expect("len > 1") = ((m1 * w1 + m2 * w2) / w, w, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(sign * m, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn two_point_examples() {
        assert!(close(
            &nearly_isotonic(&[2.0, 1.0], 0.25, Direction::Increasing),
            &[1.75, 1.25],
            1e-14
        ));
        assert!(close(
            &nearly_isotonic(&[2.0, 1.0], 1.0, Direction::Increasing),
            &[1.5, 1.5],
            1e-14
        ));
        assert!(close(
            &nearly_isotonic(&[1.0, 2.0], 1.0, Direction::Decreasing),
            &[1.5, 1.5],
            1e-14
        ));
    }

    #[test]
    fn monotone_input_is_fixed() {
        let y = [-1.0, 0.0, 0.0, 2.5, 3.0];
        for lam in [0.0, 0.3, 5.0, 1e6] {
            assert_eq!(nearly_isotonic(&y, lam, Direction::Increasing), y.to_vec());
        }
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        assert!(close(
            &nearly_isotonic(&rev, 2.0, Direction::Decreasing),
            &rev,
            1e-14
        ));
    }

    #[test]
    fn degenerate_lengths() {
        assert!(nearly_isotonic(&[], 1.0, Direction::Increasing).is_empty());
        assert_eq!(
            nearly_isotonic(&[4.0], 1.0, Direction::Decreasing),
            vec![4.0]
        );
    }

    #[test]
    fn pava_small_cases() {
        assert_eq!(
            isotonic_regression(&[3.0, 1.0, 2.0], None, Direction::Increasing),
            vec![2.0, 2.0, 2.0]
        );
        assert_eq!(
            isotonic_regression(&[1.0, 3.0, 2.0, 4.0], None, Direction::Increasing),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(
            isotonic_regression(&[1.0, 3.0, 2.0], None, Direction::Decreasing),
            vec![2.0, 2.0, 2.0]
        );
        let w = [1.0, 3.0];
        assert_eq!(
            isotonic_regression(&[2.0, 0.0], Some(&w), Direction::Increasing),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn infinite_lambda_is_pava() {
        let y = [0.3, -1.0, 2.0, 1.0, 1.5, -0.2];
        assert_eq!(
            nearly_isotonic(&y, f64::INFINITY, Direction::Increasing),
            isotonic_regression(&y, None, Direction::Increasing)
        );
    }

    #[test]
    fn three_point_partial_pooling() {
        // s_0 = (3 - 2.5)/0.5 = 1 saturates; s_1 = (1 - 1.5)/0.5 + 1 = 0 since 1.5 < 2
        let b = nearly_isotonic(&[3.0, 1.0, 2.0], 0.5, Direction::Increasing);
        assert!(close(&b, &[2.5, 1.5, 2.0], 1e-14), "{b:?}");
    }
}
