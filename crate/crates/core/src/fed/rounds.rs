use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{max_abs_diff, ClientState, ConsensusState, RoundRecord, Summation};
use crate::error::{invalid, Error, Result};
use crate::optim::Objective;

/// Inner gradient-descent solver for the cADMM θ-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSolverConfig {
    /// Stop once the augmented gradient norm is at most this.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self { tolerance: 1e-4, max_iters: 200 }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iters == 0 {
            return invalid("inner solver needs a positive tolerance and at least one iteration");
        }
        Ok(())
    }
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn participant_mask(k: usize, participants: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; k];
    for &i in participants {
        if i >= k || mask[i] {
            return invalid(format!("participant index {i} is out of range or repeated"));
        }
        mask[i] = true;
    }
    Ok(mask)
}

fn check_dims<O: Objective>(clients: &[ClientState<O>], state: &ConsensusState) -> Result<()> {
    let p = state.z.len();
    for c in clients {
        if c.dim() != p || c.theta.len() != p || c.dual_u.len() != p {
            return invalid(format!("client {} does not match the global dimension {p}", c.id));
        }
    }
    Ok(())
}

/// Runs `f` on every participating client in parallel. The first failure in
/// client order is returned as a round error.
fn for_participants<O, F>(clients: &mut [ClientState<O>], mask: &[bool], round: usize, f: F) -> Result<()>
where
    O: Objective + Send,
    F: Fn(&mut ClientState<O>) -> Result<()> + Sync,
{
    let results: Vec<Result<()>> = clients
        .par_iter_mut()
        .zip(mask.par_iter())
        .map(|(c, &on)| {
            if !on {
                return Ok(());
            }
            f(c).map_err(|e| Error::Round { round, client: c.id, source: Box::new(e) })
        })
        .collect();
    results.into_iter().collect()
}

/// Appends the history record of the round that just ran.
fn finish_round<O: Objective + Send>(
    clients: &[ClientState<O>],
    state: &mut ConsensusState,
    participants: usize,
    summation: &mut Summation,
    started: Instant,
) -> Result<()> {
    let z = &state.z;
    let values: Vec<Result<(usize, f64)>> = clients.par_iter().map(|c| Ok((c.id, c.local_nll(z)?))).collect();
    let values: Vec<(usize, f64)> = values.into_iter().collect::<Result<_>>()?;
    let objective = summation.sum_scalar(&values)?;
    let consensus_gap = clients.iter().map(|c| max_abs_diff(&c.theta, z)).fold(0.0, f64::max);
    state.round += 1;
    state.history.push(RoundRecord {
        round: state.round,
        objective,
        consensus_gap,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        participants,
        gradient_evals: clients.iter().map(|c| c.gradient_evals).sum(),
    });
    Ok(())
}

/// ADMM server step: `z = mean_{k∈P}(θ_k + u_k/ρ_k)`.
fn admm_average<O: Objective>(clients: &[ClientState<O>], mask: &[bool], summation: &mut Summation) -> Result<Vec<f64>> {
    let uploads: Vec<(usize, Vec<f64>)> = clients
        .iter()
        .zip(mask)
        .filter(|(_, &on)| on)
        .map(|(c, _)| (c.id, c.theta.iter().zip(&c.dual_u).map(|(t, u)| t + u / c.rho).collect()))
        .collect();
    let count = uploads.len() as f64;
    Ok(summation.sum(&uploads)?.into_iter().map(|s| s / count).collect())
}

fn dual_update<O>(c: &mut ClientState<O>, z: &[f64]) {
    for ((u, t), zj) in c.dual_u.iter_mut().zip(&c.theta).zip(z) {
        *u += c.rho * (t - zj);
    }
}

/// Minimizes `l(θ) + uᵀ(θ − z) + ρ/2 ‖θ − z‖²` from the client's current θ.
///
/// Always takes at least one step, so a converged outer iteration is a
/// stationary point of the augmented Lagrangian rather than merely within the
/// inner tolerance of one.
fn solve_augmented<O: Objective>(c: &mut ClientState<O>, z: &[f64], cfg: &InnerSolverConfig) -> Result<()> {
    let rho = c.rho;
    let penalty = |c: &ClientState<O>, theta: &[f64]| -> f64 {
        theta
            .iter()
            .zip(z)
            .zip(&c.dual_u)
            .map(|((t, zj), u)| u * (t - zj) + 0.5 * rho * (t - zj) * (t - zj))
            .sum()
    };
    let eval = |c: &mut ClientState<O>, theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (l, mut g) = c.local_nll_grad(theta)?;
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += c.dual_u[j] + rho * (theta[j] - z[j]);
        }
        Ok((l + penalty(c, theta), g))
    };

    let mut theta = c.theta.clone();
    let (mut value, mut grad) = eval(c, &theta)?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Optimization("augmented objective is not finite at the warm start".into()));
    }
    let mut step = 1.0 / rho;
    for it in 0..cfg.max_iters {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if it > 0 && g2.sqrt() <= cfg.tolerance {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(a, g)| a - t * g).collect();
            match c.local_nll(&trial) {
                Ok(l) if l.is_finite() => {
                    any_finite = true;
                    if l + penalty(c, &trial) <= value - ARMIJO_C * t * g2 {
                        accepted = Some(trial);
                        break;
                    }
                }
                Ok(_) | Err(Error::Numerical { .. }) | Err(Error::InvalidArgument(_)) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                theta = next;
                step = 2.0 * t;
                (value, grad) = eval(c, &theta)?;
                if !value.is_finite() {
                    return Err(Error::Optimization("inner solver reached a non-finite value".into()));
                }
            }
            None if !any_finite => {
                return Err(Error::Optimization("inner solver diverged: no finite trial point".into()));
            }
            None => break,
        }
    }
    c.theta = theta;
    Ok(())
}

/// One consensus-ADMM round over the clients indexed by `participants`.
///
/// Server: `z ← mean(θ_k + u_k/ρ_k)` over participants. Clients: inexact
/// minimization of their augmented Lagrangian, then `u_k += ρ_k(θ_k − z)`.
/// Non-participants keep their state.
pub fn cadmm_round<O: Objective + Send>(
    clients: &mut [ClientState<O>],
    state: &mut ConsensusState,
    participants: &[usize],
    summation: &mut Summation,
    inner: &InnerSolverConfig,
) -> Result<()> {
    let started = Instant::now();
    check_dims(clients, state)?;
    let mask = participant_mask(clients.len(), participants)?;
    if !participants.is_empty() {
        let z = admm_average(clients, &mask, summation)?;
        let round = state.round + 1;
        for_participants(clients, &mask, round, |c| {
            solve_augmented(c, &z, inner)?;
            dual_update(c, &z);
            Ok(())
        })?;
        state.z = z;
    }
    finish_round(clients, state, participants.len(), summation, started)
}

/// One proximal-ADMM round: a single local gradient at the new `z` and the
/// closed-form step `θ_k = z − (∇l_k(z) + u_k)/(ρ_k + L_k)`.
pub fn pxadmm_round<O: Objective + Send>(
    clients: &mut [ClientState<O>],
    state: &mut ConsensusState,
    participants: &[usize],
    summation: &mut Summation,
) -> Result<()> {
    let started = Instant::now();
    check_dims(clients, state)?;
    let mask = participant_mask(clients.len(), participants)?;
    if !participants.is_empty() {
        let z = admm_average(clients, &mask, summation)?;
        let round = state.round + 1;
        for_participants(clients, &mask, round, |c| {
            let (_, g) = c.local_nll_grad(&z)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Optimization("non-finite local gradient".into()));
            }
            let denom = c.rho + c.lipschitz;
            c.theta = z.iter().zip(&g).zip(&c.dual_u).map(|((zj, gj), u)| zj - (gj + u) / denom).collect();
            dual_update(c, &z);
            Ok(())
        })?;
        state.z = z;
    }
    finish_round(clients, state, participants.len(), summation, started)
}

/// `local_iters` fixed-step gradient steps on the local objective from `z`.
pub fn fedavg_local_step<O: Objective>(
    client: &mut ClientState<O>,
    z: &[f64],
    learning_rate: f64,
    local_iters: usize,
) -> Result<Vec<f64>> {
    let mut theta = z.to_vec();
    for _ in 0..local_iters {
        let (_, g) = client.local_nll_grad(&theta)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimization("non-finite local gradient".into()));
        }
        for (t, gj) in theta.iter_mut().zip(&g) {
            *t -= learning_rate * gj;
        }
    }
    Ok(theta)
}

/// Local steps on `l(θ) + μ/2 ‖θ − z‖²`.
///
/// The gradient of `l` is taken explicitly and the proximal term implicitly,
/// `θ ← (θ + ημz − η∇l(θ)) / (1 + ημ)`, which is stable for any `μ ≥ 0` and
/// equals the FedAvg step when `μ = 0`.
pub fn fedprox_local_step<O: Objective>(
    client: &mut ClientState<O>,
    z: &[f64],
    prox_mu: f64,
    learning_rate: f64,
    local_iters: usize,
) -> Result<Vec<f64>> {
    if !(prox_mu >= 0.0) {
        return invalid("prox_mu must be non-negative");
    }
    let mut theta = z.to_vec();
    let shrink = 1.0 + learning_rate * prox_mu;
    for _ in 0..local_iters {
        let (_, g) = client.local_nll_grad(&theta)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimization("non-finite local gradient".into()));
        }
        for ((t, gj), zj) in theta.iter_mut().zip(&g).zip(z) {
            *t = (*t + learning_rate * prox_mu * zj - learning_rate * gj) / shrink;
        }
    }
    Ok(theta)
}

fn weighted_average_round<O, F>(
    clients: &mut [ClientState<O>],
    state: &mut ConsensusState,
    participants: &[usize],
    summation: &mut Summation,
    local: F,
) -> Result<()>
where
    O: Objective + Send,
    F: Fn(&mut ClientState<O>, &[f64]) -> Result<Vec<f64>> + Sync,
{
    let started = Instant::now();
    check_dims(clients, state)?;
    let mask = participant_mask(clients.len(), participants)?;
    if participants.is_empty() {
        log::warn!("round {}: no participating clients, skipped", state.round + 1);
        return finish_round(clients, state, 0, summation, started);
    }
    let z = state.z.clone();
    for_participants(clients, &mask, state.round + 1, |c| {
        c.theta = local(c, &z)?;
        Ok(())
    })?;
    let weights = avg_weights(clients, &mask);
    let uploads: Vec<(usize, Vec<f64>)> = clients
        .iter()
        .zip(&weights)
        .filter_map(|(c, w)| w.map(|w| (c.id, c.theta.iter().map(|t| w * t).collect())))
        .collect();
    state.z = summation.sum(&uploads)?;
    finish_round(clients, state, participants.len(), summation, started)
}

/// Size-proportional averaging weights over participants; `None` for the rest.
pub(crate) fn avg_weights<O: Objective>(clients: &[ClientState<O>], mask: &[bool]) -> Vec<Option<f64>> {
    let total: usize = clients.iter().zip(mask).filter(|(_, &on)| on).map(|(c, _)| c.sample_count()).sum();
    clients
        .iter()
        .zip(mask)
        .map(|(c, &on)| on.then(|| c.sample_count() as f64 / total as f64))
        .collect()
}

/// One FedAvg round: local steps from `z`, then `z ← Σ w_k θ_k` with
/// `w_k = |D_k| / Σ_{j∈P} |D_j|`. An empty participant set skips the round.
pub fn fedavg_round<O: Objective + Send>(
    clients: &mut [ClientState<O>],
    state: &mut ConsensusState,
    participants: &[usize],
    summation: &mut Summation,
    learning_rate: f64,
    local_iters: usize,
) -> Result<()> {
    weighted_average_round(clients, state, participants, summation, |c, z| {
        fedavg_local_step(c, z, learning_rate, local_iters)
    })
}

/// One FedProx round: FedAvg with proximal local steps.
pub fn fedprox_round<O: Objective + Send>(
    clients: &mut [ClientState<O>],
    state: &mut ConsensusState,
    participants: &[usize],
    summation: &mut Summation,
    prox_mu: f64,
    learning_rate: f64,
    local_iters: usize,
) -> Result<()> {
    weighted_average_round(clients, state, participants, summation, |c, z| {
        fedprox_local_step(c, z, prox_mu, learning_rate, local_iters)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::QuadraticObjective;

    fn quad_clients(centers: &[f64]) -> Vec<ClientState<QuadraticObjective>> {
        centers
            .iter()
            .enumerate()
            .map(|(i, &a)| ClientState::new(i, QuadraticObjective::new(vec![a])))
            .collect()
    }

    #[test]
    fn pxadmm_closed_form_step() {
        // l(θ) = θ, so ∇l = 1 everywhere.
        struct Linear;
        impl Objective for Linear {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, t: &[f64]) -> Result<f64> {
                Ok(t[0])
            }
            fn value_and_grad(&self, t: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((t[0], vec![1.0]))
            }
        }
        let mut clients = vec![ClientState::new(0, Linear)];
        let mut state = ConsensusState::new(vec![0.0]);
        pxadmm_round(&mut clients, &mut state, &[0], &mut Summation::plain()).unwrap();
        assert_eq!(clients[0].theta[0], -1.0 / 5500.0);
        assert!((clients[0].theta[0] + 1.8182e-4).abs() < 1e-8);
        assert_eq!(clients[0].gradient_evals, 1);
        assert_eq!(state.history.len(), 1);
    }

    #[test]
    fn pxadmm_stationary_point_is_fixed() {
        let mut clients = quad_clients(&[2.0]);
        clients[0].theta = vec![2.0];
        let mut state = ConsensusState::new(vec![2.0]);
        pxadmm_round(&mut clients, &mut state, &[0], &mut Summation::plain()).unwrap();
        assert_eq!(clients[0].theta, vec![2.0]);
        assert_eq!(state.z, vec![2.0]);
    }

    #[test]
    fn dual_update_identity() {
        let mut clients = quad_clients(&[1.0, -2.0, 4.0]);
        for c in &mut clients {
            c.rho = 3.0;
        }
        let mut state = ConsensusState::new(vec![0.5]);
        let all = [0, 1, 2];
        for _ in 0..5 {
            let before: Vec<f64> = clients.iter().map(|c| c.dual_u[0]).collect();
            cadmm_round(&mut clients, &mut state, &all, &mut Summation::plain(), &InnerSolverConfig::default()).unwrap();
            for (c, u0) in clients.iter().zip(&before) {
                assert_eq!(c.dual_u[0], u0 + c.rho * (c.theta[0] - state.z[0]));
            }
        }
    }

    #[test]
    fn cadmm_uses_at_least_one_gradient_per_client() {
        let mut clients = quad_clients(&[1.0, 2.0]);
        let mut state = ConsensusState::new(vec![0.0]);
        cadmm_round(&mut clients, &mut state, &[0, 1], &mut Summation::plain(), &InnerSolverConfig::default()).unwrap();
        assert!(clients.iter().all(|c| c.gradient_evals >= 1));
    }

    #[test]
    fn fedavg_weights_follow_sizes() {
        let mut clients = quad_clients(&[0.0, 0.0, 0.0]);
        for (c, n) in clients.iter_mut().zip([4, 3, 3]) {
            c.objective.samples = n;
        }
        let w = avg_weights(&clients, &[true, true, true]);
        assert_eq!(w, vec![Some(0.4), Some(0.3), Some(0.3)]);
        let w = avg_weights(&clients, &[true, false, true]);
        assert_eq!(w[0].unwrap() + w[2].unwrap(), 1.0);
        assert_eq!(w[1], None);
    }

    #[test]
    fn fedavg_weighted_mean_arithmetic() {
        let mut clients = quad_clients(&[1.0, 3.0]);
        clients[0].objective.samples = 1;
        clients[1].objective.samples = 3;
        for c in &mut clients {
            c.objective.curvature = 0.5;
        }
        // With curvature 1/2 and learning rate 1, one step lands exactly on a_k.
        let mut state = ConsensusState::new(vec![0.0]);
        fedavg_round(&mut clients, &mut state, &[0, 1], &mut Summation::plain(), 1.0, 1).unwrap();
        assert_eq!(clients[0].theta, vec![1.0]);
        assert_eq!(clients[1].theta, vec![3.0]);
        assert_eq!(state.z, vec![2.5]);
    }

    #[test]
    fn fedavg_empty_round_is_recorded() {
        let mut clients = quad_clients(&[1.0]);
        let mut state = ConsensusState::new(vec![0.0]);
        fedavg_round(&mut clients, &mut state, &[], &mut Summation::plain(), 0.1, 1).unwrap();
        assert_eq!(state.history.len(), 1);
        assert_eq!(state.history[0].participants, 0);
        assert_eq!(state.z, vec![0.0]);
    }

    #[test]
    fn fedprox_reductions() {
        let mut a = ClientState::new(0, QuadraticObjective::new(vec![3.0, -1.0]));
        let mut b = a.clone();
        let z = [0.2, 0.7];
        let avg = fedavg_local_step(&mut a, &z, 0.05, 7).unwrap();
        let prox = fedprox_local_step(&mut b, &z, 0.0, 0.05, 7).unwrap();
        assert_eq!(avg, prox);

        let far = fedprox_local_step(&mut b, &z, 1e9, 0.05, 7).unwrap();
        assert!(max_abs_diff(&far, &z) < 1e-6);
    }

    #[test]
    fn fedprox_converges_to_proximal_minimizer() {
        // ½(θ − a)² + μ/2 (θ − z)² is minimized at (a + μz)/(1 + μ).
        let mut c = ClientState::new(0, QuadraticObjective { center: vec![3.0], curvature: 0.5, samples: 1 });
        let (a, mu, z) = (3.0, 1.0, -1.0);
        let theta = fedprox_local_step(&mut c, &[z], mu, 0.1, 400).unwrap();
        assert!((theta[0] - (a + mu * z) / (1.0 + mu)).abs() < 1e-6);

        let mut last = f64::INFINITY;
        for mu in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let t = fedprox_local_step(&mut c, &[z], mu, 0.1, 50).unwrap();
            let d = (t[0] - z).abs();
            assert!(d <= last);
            last = d;
        }
    }

    #[test]
    fn round_error_names_the_client() {
        struct Broken;
        impl Objective for Broken {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _: &[f64]) -> Result<f64> {
                Ok(0.0)
            }
            fn value_and_grad(&self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((0.0, vec![f64::NAN]))
            }
        }
        let mut clients = vec![ClientState::new(7, Broken)];
        let mut state = ConsensusState::new(vec![0.0]);
        let err = pxadmm_round(&mut clients, &mut state, &[0], &mut Summation::plain()).unwrap_err();
        assert!(matches!(err, Error::Round { round: 1, client: 7, .. }));
    }
}
