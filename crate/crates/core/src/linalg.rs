//! Small dense linear-algebra and summary-statistics helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{OedError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Cholesky factorization of a symmetric positive definite matrix together
/// with its inverse and log-determinant.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub matrix: Matrix,
    pub lower: Matrix,
    pub inverse: Matrix,
    pub logdet: f64,
}

impl SpdFactor {
    pub fn new(matrix: Matrix) -> Option<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let chol: Cholesky<f64, Dyn> = Cholesky::new(matrix.clone())?;
        let lower = chol.l();
        let mut logdet = 0.0;
        for i in 0..lower.nrows() {
            let d = lower[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            logdet += 2.0 * d.ln();
        }
        let inverse = symmetrize(&chol.inverse());
        Some(Self {
            matrix,
            lower,
            inverse,
            logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `x^T A^{-1} x` via a triangular solve.
    pub fn inv_quad(&self, x: &Vector) -> f64 {
        let z = self
            .lower
            .solve_lower_triangular(x)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// `log(sum(exp(values)))` without overflow or underflow. Returns `-inf`
/// for an empty slice or when every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Sample mean and standard error of the mean (sample standard deviation
/// over `sqrt(n)`). A single value has zero standard error.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(OedError::Dimension {
            context,
            expected,
            got,
        })
    }
}
