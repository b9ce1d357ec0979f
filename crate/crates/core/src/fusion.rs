//! Generalized product-of-experts fusion of local Gaussian predictions.
//!
//! For experts `(μ_i, σ_i²)` with weights `β_i`:
//!
//! ```text
//! 1/σ² = Σ β_i / σ_i²        μ = σ² Σ β_i μ_i / σ_i²
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertPrediction {
    pub expert: usize,
    pub mean: f64,
    pub variance: f64,
}

impl ExpertPrediction {
    pub fn new(expert: usize, mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !(variance > 0.0 && variance.is_finite()) {
            return invalid(format!("expert {expert}: mean must be finite and variance positive"));
        }
        Ok(Self { expert, mean, variance })
    }
}

/// Non-negative expert weights with a positive sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return invalid("fusion weights must be finite and non-negative");
        }
        if !(beta.iter().sum::<f64>() > 0.0) {
            return invalid("fusion weights are all zero");
        }
        Ok(Self(beta))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k.max(1) as f64; k.max(1)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Rescaled to sum to one.
    pub fn normalized(&self) -> Self {
        let s: f64 = self.0.iter().sum();
        Self(self.0.iter().map(|b| b / s).collect())
    }
}

impl TryFrom<Vec<f64>> for FusionWeights {
    type Error = crate::Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FusionWeights> for Vec<f64> {
    fn from(w: FusionWeights) -> Self {
        w.0
    }
}

/// Fused `(mean, variance)`.
pub fn gpoe_fuse(experts: &[ExpertPrediction], weights: &FusionWeights) -> Result<(f64, f64)> {
    if experts.len() != weights.len() {
        return invalid(format!("{} experts but {} weights", experts.len(), weights.len()));
    }
    let mut precision = 0.0;
    let mut weighted = 0.0;
    for (e, b) in experts.iter().zip(weights.as_slice()) {
        if !(e.variance > 0.0 && e.variance.is_finite()) || !e.mean.is_finite() {
            return invalid(format!("expert {} has a non-positive or non-finite variance", e.expert));
        }
        precision += b / e.variance;
        weighted += b * e.mean / e.variance;
    }
    let variance = 1.0 / precision;
    Ok((weighted * variance, variance))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionCriterion {
    /// Mean squared error of the fused mean.
    Mse,
    /// Negative log predictive density of the fused Gaussian.
    Nlpd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub criterion: FusionCriterion,
    pub step: f64,
    pub iterations: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { criterion: FusionCriterion::Mse, step: 0.1, iterations: 500 }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Criterion value and gradient with respect to β.
fn criterion(experts: &[Vec<ExpertPrediction>], targets: &[f64], beta: &[f64], which: FusionCriterion) -> (f64, Vec<f64>) {
    let k = beta.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    for (row, &y) in experts.iter().zip(targets) {
        let mut big_p = 0.0;
        let mut big_a = 0.0;
        for (e, b) in row.iter().zip(beta) {
            big_p += b / e.variance;
            big_a += b * e.mean / e.variance;
        }
        let m = big_a / big_p;
        let r = m - y;
        match which {
            FusionCriterion::Mse => {
                value += r * r;
                for (g, e) in grad.iter_mut().zip(row) {
                    let p = 1.0 / e.variance;
                    *g += 2.0 * r * (e.mean * p - m * p) / big_p;
                }
            }
            FusionCriterion::Nlpd => {
                value += 0.5 * (2.0 * std::f64::consts::PI / big_p).ln() + 0.5 * r * r * big_p;
                for (g, e) in grad.iter_mut().zip(row) {
                    let p = 1.0 / e.variance;
                    *g += -0.5 * p / big_p + 0.5 * r * r * p + r * (e.mean * p - m * p);
                }
            }
        }
    }
    let n = targets.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (value / n, grad)
}

/// Picks simplex weights minimizing the validation criterion by projected
/// gradient descent from uniform weights. The best iterate is returned, so
/// the result never scores worse than uniform weights.
///
/// `experts[i]` holds the K expert predictions for validation target `i`.
pub fn optimize_fusion_weights(experts: &[Vec<ExpertPrediction>], targets: &[f64], config: &FusionConfig) -> Result<FusionWeights> {
    if experts.is_empty() || experts.len() != targets.len() {
        return invalid("fusion weights need one expert set per validation target");
    }
    let k = experts[0].len();
    if k == 0 || experts.iter().any(|r| r.len() != k) {
        return invalid("every validation point needs the same nonzero number of experts");
    }
    if experts.iter().flatten().any(|e| !(e.variance > 0.0 && e.variance.is_finite() && e.mean.is_finite()))
        || targets.iter().any(|t| !t.is_finite())
    {
        return invalid("expert predictions and targets must be finite with positive variance");
    }
    if !(config.step > 0.0) {
        return invalid("fusion step must be positive");
    }
    let uniform = FusionWeights::uniform(k);
    let degenerate = experts.iter().all(|r| r.iter().all(|e| e.mean == r[0].mean && e.variance == r[0].variance));
    if k == 1 || degenerate {
        return Ok(uniform);
    }
    let mut beta = uniform.as_slice().to_vec();
    let (mut best_value, _) = criterion(experts, targets, &beta, config.criterion);
    let mut best = beta.clone();
    for _ in 0..config.iterations {
        let (_, g) = criterion(experts, targets, &beta, config.criterion);
        let stepped: Vec<f64> = beta.iter().zip(&g).map(|(b, gi)| b - config.step * gi).collect();
        beta = project_simplex(&stepped);
        let (v, _) = criterion(experts, targets, &beta, config.criterion);
        if v < best_value {
            best_value = v;
            best = beta.clone();
        }
    }
    FusionWeights::new(best)
}

/// Validation criterion of given weights.
pub fn fusion_score(experts: &[Vec<ExpertPrediction>], targets: &[f64], weights: &FusionWeights, which: FusionCriterion) -> f64 {
    criterion(experts, targets, weights.as_slice(), which).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, m: f64, v: f64) -> ExpertPrediction {
        ExpertPrediction::new(i, m, v).unwrap()
    }

    #[test]
    fn two_expert_arithmetic() {
        let (m, v) = gpoe_fuse(&[e(0, 0.0, 1.0), e(1, 2.0, 1.0)], &FusionWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!((m, v), (1.0, 1.0));
    }

    #[test]
    fn single_expert_identity() {
        let (m, v) = gpoe_fuse(&[e(0, 3.7, 0.2)], &FusionWeights::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(m, 3.7);
        assert!((v - 0.2).abs() < 1e-16);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(FusionWeights::new(vec![0.0, 0.0]).is_err());
        assert!(FusionWeights::new(vec![-0.1, 1.0]).is_err());
        assert!(ExpertPrediction::new(0, 1.0, 0.0).is_err());
        let bad = ExpertPrediction { expert: 0, mean: 0.0, variance: -1.0 };
        assert!(gpoe_fuse(&[bad], &FusionWeights::uniform(1)).is_err());
        assert!(gpoe_fuse(&[e(0, 0.0, 1.0)], &FusionWeights::uniform(2)).is_err());
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        let p = project_simplex(&[2.0, 0.0, -1.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn exact_expert_wins() {
        let targets: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let experts: Vec<Vec<ExpertPrediction>> = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| vec![e(0, y, 0.5), e(1, if i % 2 == 0 { 1.7 } else { -2.3 }, 0.5)])
            .collect();
        let w = optimize_fusion_weights(&experts, &targets, &FusionConfig::default()).unwrap();
        assert!(w.as_slice()[0] >= 0.99);
    }

    #[test]
    fn exchangeable_experts_get_uniform_weights() {
        let experts = vec![vec![e(0, 1.0, 2.0), e(1, 1.0, 2.0), e(2, 1.0, 2.0)]; 5];
        let w = optimize_fusion_weights(&experts, &[0.0, 1.0, 2.0, 3.0, 4.0], &FusionConfig::default()).unwrap();
        assert_eq!(w, FusionWeights::uniform(3));
        let one = optimize_fusion_weights(&[vec![e(0, 1.0, 1.0)]], &[0.0], &FusionConfig::default()).unwrap();
        assert_eq!(one.as_slice(), &[1.0]);
    }

    #[test]
    fn nlpd_criterion_never_worse_than_uniform() {
        let targets = [0.1, -0.4, 0.9, 0.3];
        let experts: Vec<Vec<ExpertPrediction>> = targets
            .iter()
            .map(|&y| vec![e(0, y + 0.05, 0.01), e(1, -y, 4.0), e(2, 0.0, 1.0)])
            .collect();
        let cfg = FusionConfig { criterion: FusionCriterion::Nlpd, ..Default::default() };
        let w = optimize_fusion_weights(&experts, &targets, &cfg).unwrap();
        let u = FusionWeights::uniform(3);
        assert!(fusion_score(&experts, &targets, &w, FusionCriterion::Nlpd) <= fusion_score(&experts, &targets, &u, FusionCriterion::Nlpd));
    }
}
