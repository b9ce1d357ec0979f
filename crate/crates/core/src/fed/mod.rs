//! Federated training of one hyper-parameter vector across simulated clients.
//!
//! Four methods share the round structure of a server broadcasting a global
//! vector `z` and aggregating client uploads:
//!
//! * `cadmm`: consensus ADMM, each client minimizes its augmented Lagrangian
//!   with an inner gradient-descent loop.
//! * `pxadmm`: proximal ADMM, one gradient at `z` and a closed-form step.
//! * `fedavg`: local gradient steps from `z`, size-weighted averaging.
//! * `fedprox`: FedAvg with a proximal pull toward `z`.

mod lipschitz;
mod rounds;
mod run;
mod split;
mod summation;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::optim::Objective;

pub use lipschitz::estimate_lipschitz;
pub use rounds::{cadmm_round, fedavg_local_step, fedavg_round, fedprox_local_step, fedprox_round, pxadmm_round, InnerSolverConfig};
pub use run::{run_federation, FederationFailure, FederationOutcome};
pub use split::{split_dataset, split_indices, SplitScheme};
pub use summation::{SecureAudit, Summation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cadmm,
    Pxadmm,
    Fedavg,
    Fedprox,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cadmm, Method::Pxadmm, Method::Fedavg, Method::Fedprox];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cadmm => "cadmm",
            Method::Pxadmm => "pxadmm",
            Method::Fedavg => "fedavg",
            Method::Fedprox => "fedprox",
        }
    }

    pub fn is_admm(self) -> bool {
        matches!(self, Method::Cadmm | Method::Pxadmm)
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method '{s}' (expected cadmm, pxadmm, fedavg or fedprox)"))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub method: Method,
    /// Number of clients K.
    pub clients: usize,
    pub rho: f64,
    pub rho_per_client: Option<Vec<f64>>,
    pub lipschitz: f64,
    pub lipschitz_per_client: Option<Vec<f64>>,
    pub prox_mu: f64,
    pub learning_rate: f64,
    pub local_iters: usize,
    pub participation_prob: f64,
    pub tolerance: f64,
    pub max_rounds: usize,
    pub seed: u64,
    pub secure_agg: bool,
    /// Center of the shared initial draw; zeros when absent.
    pub init_center: Option<Vec<f64>>,
    /// Half-width of the uniform perturbation around `init_center`.
    pub init_spread: f64,
    pub inner: InnerSolverConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            method: Method::Pxadmm,
            clients: 3,
            rho: 500.0,
            rho_per_client: None,
            lipschitz: 5000.0,
            lipschitz_per_client: None,
            prox_mu: 0.0,
            learning_rate: 1e-3,
            local_iters: 1,
            participation_prob: 1.0,
            tolerance: 1e-3,
            max_rounds: 1000,
            seed: 0,
            secure_agg: false,
            init_center: None,
            init_spread: 0.1,
            inner: InnerSolverConfig::default(),
        }
    }
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return invalid("federation needs at least one client");
        }
        if !positive_finite(self.tolerance) {
            return invalid("tolerance must be positive");
        }
        if self.max_rounds == 0 {
            return invalid("max_rounds must be at least 1");
        }
        if !(self.participation_prob > 0.0 && self.participation_prob <= 1.0) {
            return invalid("participation_prob must lie in (0, 1]");
        }
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return invalid("init_spread must be non-negative");
        }
        for (name, shared, per) in [
            ("rho", self.rho, &self.rho_per_client),
            ("lipschitz", self.lipschitz, &self.lipschitz_per_client),
        ] {
            if !positive_finite(shared) {
                return invalid(format!("{name} must be finite and positive"));
            }
            if let Some(v) = per {
                if v.len() != self.clients {
                    return invalid(format!("{name}_per_client has {} entries for {} clients", v.len(), self.clients));
                }
                if !v.iter().all(|x| positive_finite(*x)) {
                    return invalid(format!("{name}_per_client entries must be finite and positive"));
                }
            }
        }
        if matches!(self.method, Method::Fedavg | Method::Fedprox) {
            if !positive_finite(self.learning_rate) {
                return invalid("learning_rate must be positive for fedavg and fedprox");
            }
            if self.local_iters == 0 {
                return invalid("local_iters must be at least 1");
            }
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return invalid("prox_mu must be non-negative");
        }
        self.inner.validate()
    }

    pub fn rho_for(&self, k: usize) -> f64 {
        self.rho_per_client.as_ref().map_or(self.rho, |v| v[k])
    }

    pub fn lipschitz_for(&self, k: usize) -> f64 {
        self.lipschitz_per_client.as_ref().map_or(self.lipschitz, |v| v[k])
    }
}

/// One client: a private local objective plus its ADMM state.
#[derive(Debug, Clone)]
pub struct ClientState<O> {
    pub id: usize,
    pub objective: O,
    pub theta: Vec<f64>,
    pub dual_u: Vec<f64>,
    pub rho: f64,
    pub lipschitz: f64,
    /// Local gradient evaluations performed so far.
    pub gradient_evals: u64,
}

impl<O: Objective> ClientState<O> {
    pub fn new(id: usize, objective: O) -> Self {
        let p = objective.dim();
        Self {
            id,
            objective,
            theta: vec![0.0; p],
            dual_u: vec![0.0; p],
            rho: 500.0,
            lipschitz: 5000.0,
            gradient_evals: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn sample_count(&self) -> usize {
        self.objective.sample_count()
    }

    /// Local objective `l_k(θ)`.
    pub fn local_nll(&self, theta: &[f64]) -> Result<f64> {
        self.objective.value(theta)
    }

    /// Local objective and gradient; counted.
    pub fn local_nll_grad(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.gradient_evals += 1;
        self.objective.value_and_grad(theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// `Σ_k l_k(z)` after the round.
    pub objective: f64,
    /// `max_k ‖θ_k − z‖∞` after the round.
    pub consensus_gap: f64,
    pub wall_ms: f64,
    pub participants: usize,
    /// Cumulative local gradient evaluations over all clients.
    pub gradient_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConsensusState {
    pub z: Vec<f64>,
    pub round: usize,
    pub history: Vec<RoundRecord>,
}

impl ConsensusState {
    pub fn new(z: Vec<f64>) -> Self {
        Self { z, round: 0, history: Vec::new() }
    }

    /// History as CSV with header `round,objective,consensus_gap,wall_ms,participants,gradient_evals`.
    pub fn history_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("round,objective,consensus_gap,wall_ms,participants,gradient_evals\n");
        for r in &self.history {
            let wall = if with_timing { r.wall_ms } else { 0.0 };
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{},{}\n",
                r.round, r.objective, r.consensus_gap, wall, r.participants, r.gradient_evals
            ));
        }
        out
    }
}

/// `curvature · ‖θ − center‖²`, the analytic test objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub center: Vec<f64>,
    pub curvature: f64,
    pub samples: usize,
}

impl QuadraticObjective {
    pub fn new(center: Vec<f64>) -> Self {
        Self { center, curvature: 1.0, samples: 1 }
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.center.len() {
            return invalid("quadratic objective: dimension mismatch");
        }
        Ok(self.curvature * theta.iter().zip(&self.center).map(|(t, a)| (t - a) * (t - a)).sum::<f64>())
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.value(theta)?;
        Ok((v, theta.iter().zip(&self.center).map(|(t, a)| 2.0 * self.curvature * (t - a)).collect()))
    }

    fn sample_count(&self) -> usize {
        self.samples
    }
}

/// `‖a − b‖∞`.
pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
