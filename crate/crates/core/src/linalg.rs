use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::kernels::BASE_JITTER;

/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-6;

/// Cholesky factor of `C + jitter·I`, where the jitter escalates by ×10 from
/// `BASE_JITTER` to `MAX_JITTER` times the mean diagonal of `C`.
pub(crate) struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn new(c: &DMatrix<f64>) -> Result<Self> {
        let n = c.nrows();
        let scale = c.trace() / n as f64;
        if !(scale.is_finite() && scale > 0.0) || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                message: format!("covariance matrix is not finite or has non-positive mean diagonal ({scale})"),
                jitter: 0.0,
            });
        }
        let mut rel = BASE_JITTER;
        loop {
            let jitter = rel * scale;
            let mut m = c.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self { chol, jitter });
            }
            if rel >= MAX_JITTER * (1.0 - 1e-9) {
                return Err(Error::Numerical {
                    message: format!("Cholesky factorization of a {n}x{n} covariance failed"),
                    jitter,
                });
            }
            rel *= 10.0;
        }
    }

    /// `(C + jitter·I)⁻¹` as `L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let ls = l.as_slice();
        let mut linv = DMatrix::zeros(n, n);
        // Forward substitution on each unit vector, skipping its leading zeros.
        for (j, x) in linv.as_mut_slice().chunks_exact_mut(n).enumerate() {
            x[j] = 1.0;
            for k in j..n {
                let col = &ls[k * n..(k + 1) * n];
                let xk = x[k] / col[k];
                x[k] = xk;
                for (xi, lik) in x[k + 1..].iter_mut().zip(&col[k + 1..]) {
                    *xi -= lik * xk;
                }
            }
        }
        linv.transpose() * &linv
    }

    /// `log det(C + jitter·I)` from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}
