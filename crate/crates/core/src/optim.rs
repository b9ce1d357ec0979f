//! Gradient descent with Armijo backtracking over a generic objective.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A smooth objective over an unconstrained real vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> Result<f64>;

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Number of data points behind the objective (used for averaging weights).
    fn sample_count(&self) -> usize {
        1
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, theta: &[f64]) -> Result<f64> {
        (**self).value(theta)
    }
    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).value_and_grad(theta)
    }
    fn sample_count(&self) -> usize {
        (**self).sample_count()
    }
}

/// Sum of several objectives sharing one parameter vector.
pub struct SumObjective<O> {
    pub parts: Vec<O>,
}

impl<O: Objective> Objective for SumObjective<O> {
    fn dim(&self) -> usize {
        self.parts.first().map_or(0, |p| p.dim())
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.parts.iter().map(|p| p.value(theta)).sum()
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for p in &self.parts {
            let (v, g) = p.value_and_grad(theta)?;
            total += v;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((total, grad))
    }

    fn sample_count(&self) -> usize {
        self.parts.iter().map(|p| p.sample_count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientDescentConfig {
    /// First trial step of every line search.
    pub initial_step: f64,
    /// Stop once `|l(θ_η) − l(θ_η+1)| ≤ tolerance`.
    pub tolerance: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub max_halvings: usize,
}

impl Default for GradientDescentConfig {
    fn default() -> Self {
        Self { initial_step: 1e-2, tolerance: 1e-6, max_iters: 500, armijo_c: 1e-4, max_halvings: 40 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value at the start and after every accepted step.
    pub values: Vec<f64>,
    /// Iterates matching `values`.
    pub iterates: Vec<Vec<f64>>,
    pub gradient_evals: usize,
}

fn check_config(cfg: &GradientDescentConfig) -> Result<()> {
    if !(cfg.initial_step > 0.0 && cfg.tolerance > 0.0 && cfg.armijo_c > 0.0 && cfg.armijo_c < 1.0) {
        return invalid("gradient descent needs positive step and tolerance and armijo_c in (0, 1)");
    }
    Ok(())
}

/// Minimizes `objective` from `init`.
///
/// Each iteration tries `initial_step` and halves it until the Armijo
/// condition `l(θ − t g) ≤ l(θ) − c t ‖g‖²` holds. Trial points whose value
/// is non-finite or fails to factorize are rejected like any other.
pub fn minimize<O: Objective + ?Sized>(objective: &O, init: &[f64], cfg: &GradientDescentConfig) -> Result<OptimizeResult> {
    check_config(cfg)?;
    if init.len() != objective.dim() {
        return invalid(format!("initial point has {} entries, objective expects {}", init.len(), objective.dim()));
    }
    let mut theta = init.to_vec();
    let (mut value, mut grad) = objective.value_and_grad(&theta)?;
    if !value.is_finite() {
        return Err(Error::Optimization("objective is not finite at the initial point".into()));
    }
    let mut gradient_evals = 1;
    let mut values = vec![value];
    let mut iterates = vec![theta.clone()];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 == 0.0 {
            converged = true;
            break;
        }
        let mut step = cfg.initial_step;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            match objective.value(&trial) {
                Ok(v) if v.is_finite() => {
                    any_finite = true;
                    if v <= value - cfg.armijo_c * step * g2 {
                        accepted = Some(trial);
                        break;
                    }
                }
                Ok(_) | Err(Error::Numerical { .. }) | Err(Error::InvalidArgument(_)) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            if !any_finite {
                return Err(Error::Optimization(format!(
                    "no finite objective value along the descent direction at iteration {iterations}"
                )));
            }
            // No representable decrease left along -g.
            converged = true;
            break;
        };
        iterations += 1;
        let (v, g) = objective.value_and_grad(&next)?;
        gradient_evals += 1;
        let change = (value - v).abs();
        theta = next;
        value = v;
        grad = g;
        values.push(value);
        iterates.push(theta.clone());
        if change <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(OptimizeResult { theta, value, converged, iterations, values, iterates, gradient_evals })
}
