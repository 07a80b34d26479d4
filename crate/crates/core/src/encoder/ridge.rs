use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Pearson correlation; a constant series on either side gives 0.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    // tiny relative variance means the column is constant up to rounding
    let scale_a = a[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_b = b[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = |scale: f64| (scale * scale * n as f64 * 1e-24).max(f64::MIN_POSITIVE);
    if saa <= tol(scale_a) || sbb <= tol(scale_b) {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Column-wise Pearson r between two `(n, V)` matrices.
pub fn pearson_per_voxel(predicted: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<Vec<f64>> {
    if predicted.shape() != actual.shape() {
        return Err(invalid(format!(
            "prediction shape {:?} differs from response shape {:?}",
            predicted.shape(),
            actual.shape()
        )));
    }
    Ok((0..actual.ncols())
        .map(|v| pearson(predicted.column(v).as_slice(), actual.column(v).as_slice()))
        .collect())
}

/// Thin SVD of a design, reusable across regularization strengths.
pub struct RidgeSolver {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v_t: DMatrix<f64>,
    cols: usize,
}

impl RidgeSolver {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(invalid("ridge design is empty"));
        }
        let svd = x.clone().svd(true, true);
        Ok(Self {
            u: svd.u.expect("requested"),
            s: svd.singular_values,
            v_t: svd.v_t.expect("requested"),
            cols: x.ncols(),
        })
    }

    /// Ratio of largest to smallest singular value over all `cols` directions.
    pub fn condition(&self) -> f64 {
        let max = self.s.max();
        let min = if self.s.len() < self.cols { 0.0 } else { self.s.min() };
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    fn rank_deficient(&self) -> bool {
        let n = self.u.nrows().max(self.cols) as f64;
        self.s.len() < self.cols || self.s.min() <= self.s.max() * n * f64::EPSILON
    }

    /// `W = V diag(s / (s^2 + lambda)) U^T Y`.
    pub fn solve(&self, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if y.nrows() != self.u.nrows() {
            return Err(invalid(format!(
                "design has {} rows, responses have {}",
                self.u.nrows(),
                y.nrows()
            )));
        }
        if lambda == 0.0 && self.rank_deficient() {
            return Err(Error::Singular {
                condition: self.condition(),
            });
        }
        let mut uty = self.u.transpose() * y;
        for (i, mut row) in uty.row_iter_mut().enumerate() {
            let s = self.s[i];
            let f = if s == 0.0 { 0.0 } else { s / (s * s + lambda) };
            row *= f;
        }
        Ok(self.v_t.transpose() * uty)
    }
}

/// Closed-form ridge solution of `min ||XW - Y||^2 + lambda ||W||^2`.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(invalid(format!("X has {} rows, Y has {}", x.nrows(), y.nrows())));
    }
    RidgeSolver::new(x)?.solve(y, lambda)
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Default regularization grid: 10 points from 1e-3 to 1e6.
pub fn default_lambdas() -> Vec<f64> {
    log_grid(1e-3, 1e6, 10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 4.0, 3.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &a) - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &neg) + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[2.0; 4], &a), 0.0);
        assert_eq!(pearson(&a, &[0.0; 4]), 0.0);
    }

    #[test]
    fn grid_endpoints() {
        let g = default_lambdas();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[9] - 1e6).abs() < 1e-6);
        assert!((g[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_design_at_zero_lambda() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        match fit_ridge(&x, &y, 0.0) {
            Err(Error::Singular { condition }) => assert!(condition > 1e10),
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(fit_ridge(&x, &y, 1.0).is_ok());
    }

    #[test]
    fn exact_recovery_and_shrinkage() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -0.3, 1.0, 0.7, 0.2, 0.1, -0.9]);
        let w = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let y = &x * &w;
        let fit = fit_ridge(&x, &y, 0.0).unwrap();
        assert!((fit - &w).norm() / w.norm() < 1e-12);
        let big = fit_ridge(&x, &y, 1e12).unwrap();
        assert!(big.amax() < 1e-6);
    }
}
