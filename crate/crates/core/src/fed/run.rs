use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::rounds::{cadmm_round, fedavg_round, fedprox_round, pxadmm_round};
use super::{max_abs_diff, ClientState, ConsensusState, FederationConfig, Method, SecureAudit, Summation};
use crate::error::{invalid, Error, Result};
use crate::optim::Objective;

/// Salt separating the secure-aggregation seed stream from the run seed.
const MASK_SEED_SALT: u64 = 0x6d61_736b_7365_6564;

#[derive(Debug, Clone)]
pub struct FederationOutcome<O> {
    pub z: Vec<f64>,
    pub state: ConsensusState,
    pub clients: Vec<ClientState<O>>,
    pub converged: bool,
    /// Present when secure aggregation was on.
    pub audit: Option<SecureAudit>,
}

impl<O> FederationOutcome<O> {
    pub fn gradient_evals(&self) -> u64 {
        self.clients.iter().map(|c| c.gradient_evals).sum()
    }
}

/// A failed run together with the history recorded before the failure.
#[derive(Debug)]
pub struct FederationFailure {
    pub error: Error,
    pub state: ConsensusState,
}

impl std::fmt::Display for FederationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed rounds)", self.error, self.state.round)
    }
}

impl std::error::Error for FederationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<FederationFailure> for Error {
    fn from(f: FederationFailure) -> Self {
        f.error
    }
}

fn prepare<O: Objective>(config: &FederationConfig, clients: &mut [ClientState<O>], rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    config.validate()?;
    if clients.len() != config.clients {
        return invalid(format!("config expects {} clients, got {}", config.clients, clients.len()));
    }
    let p = clients[0].dim();
    if p == 0 || clients.iter().any(|c| c.dim() != p) {
        return invalid("clients disagree on the parameter dimension");
    }
    let mut ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != clients.len() {
        return invalid("client ids are not distinct");
    }
    let center = config.init_center.clone().unwrap_or_else(|| vec![0.0; p]);
    if center.len() != p {
        return invalid(format!("init_center has {} entries, parameter dimension is {p}", center.len()));
    }
    let theta0: Vec<f64> = center.iter().map(|c| c + config.init_spread * rng.gen_range(-1.0..=1.0)).collect();
    for (k, c) in clients.iter_mut().enumerate() {
        c.theta = theta0.clone();
        c.dual_u = vec![0.0; p];
        c.rho = config.rho_for(k);
        c.lipschitz = config.lipschitz_for(k);
    }
    Ok(theta0)
}

/// Runs federated rounds of `config.method` until the stopping rule fires or
/// `max_rounds` is reached.
///
/// Every client starts from one shared seeded draw with zero duals. Each
/// round every client participates independently with `participation_prob`.
/// ADMM methods stop when no local θ_k and not z moved by more than the
/// tolerance in any coordinate; FedAvg and FedProx stop when the global
/// objective changes by at most the tolerance.
pub fn run_federation<O: Objective + Send>(
    config: &FederationConfig,
    mut clients: Vec<ClientState<O>>,
) -> std::result::Result<FederationOutcome<O>, FederationFailure> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let theta0 = match prepare(config, &mut clients, &mut rng) {
        Ok(t) => t,
        Err(error) => return Err(FederationFailure { error, state: ConsensusState::default() }),
    };
    let mut state = ConsensusState::new(theta0);
    let mut summation = if config.secure_agg {
        Summation::secure(config.seed ^ MASK_SEED_SALT).with_audit()
    } else {
        Summation::plain()
    };

    let k = clients.len();
    let mut converged = false;
    let mut last_objective: Option<f64> = None;
    for _ in 0..config.max_rounds {
        let participants: Vec<usize> = if config.participation_prob >= 1.0 {
            (0..k).collect()
        } else {
            (0..k).filter(|_| rng.gen_bool(config.participation_prob)).collect()
        };
        let prev_theta: Vec<Vec<f64>> = clients.iter().map(|c| c.theta.clone()).collect();
        let prev_z = state.z.clone();
        let result = match config.method {
            Method::Cadmm => cadmm_round(&mut clients, &mut state, &participants, &mut summation, &config.inner),
            Method::Pxadmm => pxadmm_round(&mut clients, &mut state, &participants, &mut summation),
            Method::Fedavg => fedavg_round(
                &mut clients,
                &mut state,
                &participants,
                &mut summation,
                config.learning_rate,
                config.local_iters,
            ),
            Method::Fedprox => fedprox_round(
                &mut clients,
                &mut state,
                &participants,
                &mut summation,
                config.prox_mu,
                config.learning_rate,
                config.local_iters,
            ),
        };
        if let Err(error) = result {
            return Err(FederationFailure { error, state });
        }
        let record = state.history.last().expect("round appends a record");
        log::debug!(
            "{} round {}: objective {:.6}, gap {:.3e}, {} participants",
            config.method,
            record.round,
            record.objective,
            record.consensus_gap,
            record.participants
        );
        if participants.is_empty() {
            continue;
        }
        let stop = if config.method.is_admm() {
            let dtheta = clients
                .iter()
                .zip(&prev_theta)
                .map(|(c, t)| max_abs_diff(&c.theta, t))
                .fold(0.0, f64::max);
            dtheta <= config.tolerance && max_abs_diff(&state.z, &prev_z) <= config.tolerance
        } else {
            let now = record.objective;
            let stop = last_objective.is_some_and(|prev| (now - prev).abs() <= config.tolerance);
            last_objective = Some(now);
            stop
        };
        if stop {
            converged = true;
            break;
        }
    }
    log::info!(
        "{} finished after {} rounds (converged: {converged})",
        config.method,
        state.round
    );
    let audit = summation.audit().cloned();
    Ok(FederationOutcome { z: state.z.clone(), state, clients, converged, audit })
}
