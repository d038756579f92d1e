//! Small dense and banded factorizations used by the solvers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{QdlagError, Result};

/// Relative pivot threshold below which a column is treated as dependent.
const RANK_TOL: f64 = 1e-10;

/// Cholesky factor `A = L Lᵀ` of a dense symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factorizes `a`. Columns whose pivot collapses relative to their diagonal
    /// entry are reported together in [`QdlagError::Singular`].
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(QdlagError::Dimension(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        let mut bad = Vec::new();
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > RANK_TOL * a[[j, j]].abs().max(f64::MIN_POSITIVE)) {
                bad.push(j);
                continue;
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        if bad.is_empty() {
            Ok(Cholesky { lower: l })
        } else {
            Err(QdlagError::Singular { columns: bad })
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut x = b.to_owned();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[[i, k]] * x[k];
            }
            x[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[k];
            }
            x[i] = s / l[[i, i]];
        }
        x
    }
}

/// `LDLᵀ` factorization of a symmetric positive definite band matrix.
///
/// `lower[i][d - 1]` holds `L[i, i - d]` for `d = 1..=bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedLdl {
    bandwidth: usize,
    diag: Vec<f64>,
    lower: Vec<Vec<f64>>,
}

impl BandedLdl {
    /// Factorizes the matrix whose `(i, j)` entry for `j <= i <= j + bandwidth`
    /// is returned by `entry(i, j)`; entries outside the band are zero.
    pub fn factor(n: usize, bandwidth: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut diag = vec![0.0; n];
        let mut lower = vec![vec![0.0; bandwidth]; n];
        for i in 0..n {
            let lo = i.saturating_sub(bandwidth);
            for j in lo..i {
                let mut s = entry(i, j);
                let klo = lo.max(j.saturating_sub(bandwidth));
                for k in klo..j {
                    s -= lower[i][i - k - 1] * lower[j][j - k - 1] * diag[k];
                }
                lower[i][i - j - 1] = s / diag[j];
            }
            let mut d = entry(i, i);
            for k in lo..i {
                let lik = lower[i][i - k - 1];
                d -= lik * lik * diag[k];
            }
            if !(d > 0.0) {
                return Err(QdlagError::Singular { columns: vec![i] });
            }
            diag[i] = d;
        }
        Ok(BandedLdl {
            bandwidth,
            diag,
            lower,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Solves in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        let b = self.bandwidth;
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = x[i];
            for k in lo..i {
                s -= self.lower[i][i - k - 1] * x[k];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = x[i];
            for k in (i + 1)..=hi {
                s -= self.lower[k][k - i - 1] * x[k];
            }
            x[i] = s;
        }
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration, stopping once the Rayleigh quotient changes by less than
/// `rel_tol` in relative terms.
pub fn largest_eigenvalue(m: ArrayView2<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v: Array1<f64> = (0..n)
        .map(|i| 1.0 + 0.25 * ((i as f64) * 0.7).sin())
        .collect();
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = m.dot(&v);
        let next = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (next - estimate).abs() <= rel_tol * next.abs() {
            return next.max(estimate);
        }
        estimate = next;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let chol = Cholesky::factor(a.view()).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = chol.solve(b.view());
        let back = a.dot(&x);
        for i in 0..3 {
            assert!((back[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_names_dependent_columns() {
        // column 2 = column 0 + column 1
        let z = array![
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 2.0],
            [1.0, 2.0, 3.0],
            [1.0, 5.0, 6.0]
        ];
        let gram = z.t().dot(&z);
        match Cholesky::factor(gram.view()) {
            Err(QdlagError::Singular { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn banded_matches_dense() {
        let n = 7;
        let entry = |i: usize, j: usize| -> f64 {
            let d = i.abs_diff(j);
            match d {
                0 => 6.0 + i as f64 * 0.1,
                1 => -4.0,
                2 => 1.0,
                _ => 0.0,
            }
        };
        let ldl = BandedLdl::factor(n, 2, entry).unwrap();
        let dense = Array2::from_shape_fn((n, n), |(i, j)| entry(i.max(j), i.min(j)));
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut x = b.clone();
        ldl.solve_in_place(&mut x);
        let back = dense.dot(&Array1::from(x));
        for i in 0..n {
            assert!(
                (back[i] - b[i]).abs() < 1e-10,
                "{i}: {} vs {}",
                back[i],
                b[i]
            );
        }
    }

    #[test]
    fn power_iteration_diagonal() {
        let m = Array2::from_diag(&array![1.0, 3.0, 2.0, 0.5]);
        let l = largest_eigenvalue(m.view(), 1e-12, 10_000);
        assert!((l - 3.0).abs() < 1e-6);
    }
}
