//! Expected kernel under Gaussian input uncertainty, by Monte-Carlo.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::eval_composite;
use super::spec::KernelSpec;
use crate::error::{invalid, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = 1e-12;

/// A random kernel input `x ~ N(mean, covariance)`.
#[derive(Debug, Clone)]
pub struct GaussianInput {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    // Square root with `factor · factorᵀ = covariance`.
    factor: DMatrix<f64>,
}

impl GaussianInput {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return invalid(format!("covariance must be {d}x{d}, got {:?}", covariance.shape()));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return invalid("Gaussian input contains a non-finite value");
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_TOL {
                    return invalid("input covariance is not symmetric");
                }
            }
        }
        let eig = SymmetricEigen::new(covariance.clone());
        if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
            if min < -EIGEN_TOL {
                return invalid(format!("input covariance is not PSD (eigenvalue {min:e})"));
            }
        }
        let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let factor = &eig.eigenvectors * roots;
        Ok(Self { mean, covariance, factor })
    }

    /// A point mass at `mean`.
    pub fn certain(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self { mean, covariance: DMatrix::zeros(d, d), factor: DMatrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    fn sample(&self, eps: &DVector<f64>) -> Vec<f64> {
        (&self.mean + &self.factor * eps).iter().copied().collect()
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// `E[k(x, x')]` with `x ~ a`, `x' ~ b` independent.
///
/// Each sample draws two standard-normal vectors `e1, e2` and averages
/// `k(a(e1), b(e2))` with `k(a(e2), b(e1))`, so swapping `a` and `b` reproduces
/// the same estimate bit for bit under the same seed. The running mean is
/// updated incrementally, which keeps a point-mass input exact.
pub fn expected_kernel_mc(
    spec: &KernelSpec,
    params: &[f64],
    a: &GaussianInput,
    b: &GaussianInput,
    n_mc: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_mc == 0 {
        return invalid("n_mc must be at least 1");
    }
    let d = spec.input_dim()?;
    if a.dim() != d || b.dim() != d {
        return invalid(format!("Gaussian inputs must have dimension {d}"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draw = || DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 1..=n_mc {
        let e1 = draw();
        let e2 = draw();
        let v1 = eval_composite(spec, &a.sample(&e1), &b.sample(&e2), params)?;
        let v2 = eval_composite(spec, &a.sample(&e2), &b.sample(&e1), params)?;
        let v = 0.5 * (v1 + v2);
        let delta = v - mean;
        mean += delta / i as f64;
        m2 += delta * (v - mean);
    }
    let std_error = if n_mc > 1 { (m2 / (n_mc - 1) as f64 / n_mc as f64).sqrt() } else { f64::INFINITY };
    Ok(MonteCarloEstimate { value: mean, std_error })
}
