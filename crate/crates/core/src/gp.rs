//! Exact zero-mean GP regression.
//!
//! The training objective is `l(θ) = yᵀC⁻¹y + log det C` with
//! `C = K(X, X) + σ_e² I`; the `n·log 2π` constant and the factor ½ are
//! omitted. Predictive covariances include `σ_e²` on the test outputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::{gram_matrix, kernel_matrix, HyperParamVector, KernelSpec};
use crate::kernels::gram_with_grad;
use crate::linalg::JitteredCholesky;
use crate::optim::{minimize, GradientDescentConfig, Objective, OptimizeResult};

/// Inputs (n × d) with scalar outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    outputs: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return invalid("dataset must have at least one row");
        }
        if inputs.nrows() != outputs.len() {
            return invalid(format!("{} input rows but {} outputs", inputs.nrows(), outputs.len()));
        }
        if inputs.ncols() == 0 {
            return invalid("dataset inputs need at least one column");
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return invalid("dataset contains a non-finite value");
        }
        Ok(Self { inputs, outputs })
    }

    /// Builds a dataset from row-major input rows.
    pub fn from_rows(rows: &[Vec<f64>], outputs: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return invalid("ragged input rows");
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), d, &flat), DVector::from_vec(outputs))
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.len()) {
            return invalid("row index out of range");
        }
        let inputs = self.inputs.select_rows(rows);
        let outputs = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.outputs[r]));
        Self::new(inputs, outputs)
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| crate::Error::InvalidArgument("nothing to concatenate".into()))?;
        let d = first.dim();
        if parts.iter().any(|p| p.dim() != d) {
            return invalid("datasets disagree on input dimension");
        }
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut inputs = DMatrix::zeros(n, d);
        let mut outputs = DVector::zeros(n);
        let mut r = 0;
        for p in parts {
            inputs.rows_mut(r, p.len()).copy_from(&p.inputs);
            outputs.rows_mut(r, p.len()).copy_from(&p.outputs);
            r += p.len();
        }
        Self::new(inputs, outputs)
    }
}

/// Kernel plus hyper-parameters; `theta` = kernel log-params followed by `log σ_e²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPModel {
    pub spec: KernelSpec,
    pub theta: HyperParamVector,
}

impl GPModel {
    pub fn new(spec: KernelSpec, theta: HyperParamVector) -> Result<Self> {
        spec.input_dim()?;
        let expected = spec.param_count() + 1;
        if theta.len() != expected {
            return invalid(format!("model needs {expected} hyper-parameters, got {}", theta.len()));
        }
        Ok(Self { spec, theta })
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        Self::new(self.spec.clone(), HyperParamVector::from_log(theta.to_vec())?)
    }

    pub fn kernel_params(&self) -> &[f64] {
        &self.theta.as_slice()[..self.spec.param_count()]
    }

    pub fn log_noise_var(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var().exp()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: GPModel = toml::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))?;
        Self::new(m.spec, m.theta)
    }
}

/// Posterior predictive `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPrediction {
    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

fn check_model_data(model: &GPModel, data: &Dataset) -> Result<()> {
    let d = model.spec.input_dim()?;
    if data.dim() != d {
        return invalid(format!("dataset has {} input columns, kernel expects {d}", data.dim()));
    }
    Ok(())
}

fn noisy_gram(model: &GPModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut c = gram_matrix(&model.spec, model.kernel_params(), x)?;
    let noise = model.noise_var();
    for i in 0..c.nrows() {
        c[(i, i)] += noise;
    }
    Ok(c)
}

/// Negative log marginal likelihood (without the `2π` constant).
pub fn nll(model: &GPModel, data: &Dataset) -> Result<f64> {
    check_model_data(model, data)?;
    let c = noisy_gram(model, data.inputs())?;
    let f = JitteredCholesky::new(&c)?;
    let alpha = f.chol.solve(data.outputs());
    Ok(data.outputs().dot(&alpha) + f.log_det())
}

/// Gradient of [`nll`] with respect to every log-domain entry of `theta`.
pub fn nll_grad(model: &GPModel, data: &Dataset) -> Result<Vec<f64>> {
    Ok(nll_with_grad(model, data)?.1)
}

pub fn nll_with_grad(model: &GPModel, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    check_model_data(model, data)?;
    let (mut c, dk) = gram_with_grad(&model.spec, model.kernel_params(), data.inputs())?;
    let noise = model.noise_var();
    for i in 0..c.nrows() {
        c[(i, i)] += noise;
    }
    let f = JitteredCholesky::new(&c)?;
    log::trace!("nll gradient: n = {}, jitter = {:e}", data.len(), f.jitter);
    let y = data.outputs();
    let alpha = f.chol.solve(y);
    let value = y.dot(&alpha) + f.log_det();

    // ∂l/∂θ = tr(C⁻¹ ∂C) − αᵀ ∂C α = Σ_jk (C⁻¹ − ααᵀ)_jk ∂C_jk
    let c_inv = f.inverse();
    let w = &c_inv - &alpha * alpha.transpose();
    let mut grad: Vec<f64> = dk.iter().map(|m| w.dot(m)).collect();
    grad.push(noise * (c_inv.trace() - alpha.dot(&alpha)));
    Ok((value, grad))
}

/// Predictive distribution of noisy outputs at `x_star`.
pub fn posterior(model: &GPModel, train: &Dataset, x_star: &DMatrix<f64>) -> Result<GaussianPrediction> {
    check_model_data(model, train)?;
    if x_star.nrows() == 0 {
        return invalid("no test inputs");
    }
    let c = noisy_gram(model, train.inputs())?;
    let f = JitteredCholesky::new(&c)?;
    let k_cross = kernel_matrix(&model.spec, model.kernel_params(), train.inputs(), x_star)?;
    let alpha = f.chol.solve(train.outputs());
    let mean = k_cross.transpose() * alpha;
    let v = f.chol.l().solve_lower_triangular(&k_cross).expect("Cholesky factor has a positive diagonal");
    let mut cov = noisy_gram(model, x_star)? - v.transpose() * v;
    // Symmetrize away rounding in VᵀV.
    let m = cov.nrows();
    for i in 0..m {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
        cov[(i, i)] = cov[(i, i)].max(0.0);
    }
    Ok(GaussianPrediction { mean, covariance: cov })
}

/// The GP objective on one dataset, as a function of the log-domain `theta`.
#[derive(Debug, Clone)]
pub struct GpObjective {
    pub spec: KernelSpec,
    pub data: Dataset,
}

impl GpObjective {
    pub fn new(spec: KernelSpec, data: Dataset) -> Result<Self> {
        let d = spec.input_dim()?;
        if data.dim() != d {
            return invalid(format!("dataset has {} input columns, kernel expects {d}", data.dim()));
        }
        Ok(Self { spec, data })
    }

    fn model(&self, theta: &[f64]) -> Result<GPModel> {
        GPModel::new(self.spec.clone(), HyperParamVector::from_log(theta.to_vec())?)
    }
}

impl Objective for GpObjective {
    fn dim(&self) -> usize {
        self.spec.param_count() + 1
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        nll(&self.model(theta)?, &self.data)
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        nll_with_grad(&self.model(theta)?, &self.data)
    }

    fn sample_count(&self) -> usize {
        self.data.len()
    }
}

/// Result of [`fit_centralized`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: GPModel,
    pub converged: bool,
    pub iterations: usize,
    pub trace: OptimizeResult,
}

/// Maximum-likelihood fit by gradient descent with Armijo backtracking,
/// starting from `model.theta`.
pub fn fit_centralized(model: &GPModel, data: &Dataset, config: &GradientDescentConfig) -> Result<FitResult> {
    let objective = GpObjective::new(model.spec.clone(), data.clone())?;
    let result = minimize(&objective, model.theta.as_slice(), config)?;
    Ok(FitResult {
        model: model.with_theta(&result.theta)?,
        converged: result.converged,
        iterations: result.iterations,
        trace: result,
    })
}
