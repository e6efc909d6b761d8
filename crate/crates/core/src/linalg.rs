//! Dense helpers shared by the robust estimator and the generative
//! classifier. Everything is f64 and single-threaded so results do not depend
//! on the thread pool.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{PdaError, Result};

/// Relative ridge added to scatter matrices before they are factorized.
pub const RIDGE_SCALE: f64 = 1e-6;

/// `RIDGE_SCALE * max(trace(cov) / D, 1e-12)`.
pub fn ridge(cov: ArrayView2<f64>) -> f64 {
    let d = cov.nrows().max(1) as f64;
    RIDGE_SCALE * (cov.diag().sum() / d).max(1e-12)
}

pub fn add_ridge(cov: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let mut out = cov.clone();
    out.diag_mut().mapv_inplace(|v| v + lambda);
    out
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(PdaError::Schema(format!(
                "cannot factor a {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if diag.is_nan() || diag <= 0.0 {
                return Err(PdaError::State(format!(
                    "matrix is not positive definite (pivot {j} = {diag:e})"
                )));
            }
            let pivot = diag.sqrt();
            l[[j, j]] = pivot;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / pivot;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solves `L·z = b` by forward substitution.
    pub fn solve_lower(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut z = Array1::<f64>::zeros(n);
        for i in 0..n {
            let row = self.lower.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * z[k];
            }
            z[i] = s / row[i];
        }
        z
    }

    /// Squared Mahalanobis norm `bᵀ·(L·Lᵀ)⁻¹·b`.
    pub fn mahalanobis_sq(&self, b: ArrayView1<f64>) -> f64 {
        self.solve_lower(b).iter().map(|v| v * v).sum()
    }
}

/// Mean and maximum-likelihood covariance (divisor `len`) of the selected
/// rows, accumulated in index order.
pub fn subset_mean_cov(points: ArrayView2<f64>, rows: &[usize]) -> (Array1<f64>, Array2<f64>) {
    let subset = points.select(Axis(0), rows);
    mean_cov(subset.view())
}

pub fn mean_cov(points: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = points.nrows();
    let d = points.ncols();
    let mut mean = Array1::<f64>::zeros(d);
    for row in points.rows() {
        mean += &row;
    }
    mean /= n as f64;
    let centered = &points - &mean;
    let mut cov = centered.t().dot(&centered);
    cov /= n as f64;
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    (mean, cov)
}
