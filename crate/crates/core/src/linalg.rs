//! Small dense symmetric-matrix helpers (row-major `Vec<f64>`).

use crate::error::{QarError, Result};

/// Lower Cholesky factor of a symmetric positive definite `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &[f64], n: usize) -> Result<Self> {
        Self::factor(a, n, None)
    }

    /// Factor a positive semidefinite matrix. Pivots at or below `tol` are
    /// treated as exact zeros; a pivot below `-max(tol, 1e-8)` times the
    /// largest diagonal entry is an error.
    pub fn new_semidefinite(a: &[f64], n: usize, tol: f64) -> Result<Self> {
        Self::factor(a, n, Some(tol))
    }

    fn factor(a: &[f64], n: usize, psd_tol: Option<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(QarError::Dimension(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                a.len()
            )));
        }
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            let pivot_zero = match psd_tol {
                Some(tol) if d <= tol => {
                    if d < -tol.max(1e-8) * scale.max(1.0) {
                        return Err(QarError::NotPositiveDefinite { pivot: j, value: d });
                    }
                    true
                }
                _ => {
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(QarError::NotPositiveDefinite { pivot: j, value: d });
                    }
                    false
                }
            };
            if pivot_zero {
                continue;
            }
            let ljj = d.sqrt();
            l[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major lower factor.
    pub fn factor_matrix(&self) -> &[f64] {
        &self.l
    }

    /// `log |A|`.
    pub fn ln_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Solve `L w = b`. Zero pivots (semidefinite case) give `w_i = 0`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * w[k];
            }
            let d = self.l[i * n + i];
            w[i] = if d > 0.0 { s / d } else { 0.0 };
        }
        w
    }

    /// Solve `L^T x = w`.
    pub fn backward_solve(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = w[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            let d = self.l[i * n + i];
            x[i] = if d > 0.0 { s / d } else { 0.0 };
        }
        x
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward_solve(&self.forward_solve(b))
    }

    /// `b^T A^{-1} b`.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        self.forward_solve(b).iter().map(|v| v * v).sum()
    }

    /// `L z`, mapping standard normals to `N(0, A)`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[i * n + k] * z[k]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let c = Cholesky::new(&a, 2).unwrap();
        assert_eq!(c.factor_matrix(), &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert!((c.ln_det() - 8f64.ln()).abs() < 1e-14);
        let x = c.solve(&[1.0, 2.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 1.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
        let q = c.quad_form(&[1.0, 2.0]);
        assert!((q - (x[0] + 2.0 * x[1])).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(matches!(
            Cholesky::new(&[1.0, 2.0, 2.0, 1.0], 2),
            Err(QarError::NotPositiveDefinite { pivot: 1, .. })
        ));
        assert!(Cholesky::new(&[1.0, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn semidefinite_rank_one() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(Cholesky::new(&a, 2).is_err());
        let c = Cholesky::new_semidefinite(&a, 2, 1e-12).unwrap();
        let s = c.mul_lower(&[0.7, -3.0]);
        assert_eq!(s, vec![0.7, 0.7]);
    }
}
