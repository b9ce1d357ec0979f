//! GP state-space transition learning for 2-D target tracking.
//!
//! Each state dimension gets its own GP mapping the current position
//! `(x_t, y_t)` to the next coordinate, with an ARD squared-exponential
//! kernel. The per-dimension noise variance plays the role of a diagonal
//! process-noise covariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fed::{run_federation, ClientState, ConsensusState, FederationConfig};
use crate::gp::{fit_centralized, nll, posterior, Dataset, GPModel, GpObjective};
use crate::kernels::{HyperParamVector, KernelSpec};
use crate::optim::GradientDescentConfig;

/// Relative tolerance on the sampling interval of one trajectory.
const DT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Positions of one target sampled at a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub owner: usize,
    samples: Vec<StateSample>,
}

impl Trajectory {
    /// Checks length ≥ 2, finite values, strictly increasing `t` and a fixed
    /// sampling interval.
    pub fn new(id: usize, owner: usize, samples: Vec<StateSample>) -> Result<Self> {
        if let Some(i) = Self::first_violation(&samples)? {
            return invalid(format!("trajectory {id}: sample {i} breaks the fixed time step"));
        }
        Ok(Self { id, owner, samples })
    }

    /// Index of the first sample whose time step is not positive or differs
    /// from the first step.
    pub(crate) fn first_violation(samples: &[StateSample]) -> Result<Option<usize>> {
        if samples.len() < 2 {
            return invalid("a trajectory needs at least two samples");
        }
        if samples.iter().any(|s| !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite())) {
            return invalid("trajectory contains a non-finite value");
        }
        let dt = samples[1].t - samples[0].t;
        for (i, w) in samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) || (step - dt).abs() > DT_TOL * dt.abs().max(1.0) {
                return Ok(Some(i + 1));
            }
        }
        Ok(None)
    }

    pub fn samples(&self) -> &[StateSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Transition rows of a set of trajectories. Both datasets share one input
/// matrix; `row_trajectory[i]` is the id of the trajectory row `i` came from.
#[derive(Debug, Clone)]
pub struct TransitionData {
    pub x: Dataset,
    pub y: Dataset,
    pub row_trajectory: Vec<usize>,
}

impl TransitionData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Inputs `[x_t, y_t]`, outputs `x_{t+1}` and `y_{t+1}`, one row per
/// consecutive pair within each trajectory.
pub fn build_transition_dataset(trajectories: &[Trajectory]) -> Result<TransitionData> {
    if trajectories.is_empty() {
        return invalid("no trajectories to build transitions from");
    }
    let rows: usize = trajectories.iter().map(|t| t.len().saturating_sub(1)).sum();
    let mut inputs = DMatrix::zeros(rows, 2);
    let mut out_x = DVector::zeros(rows);
    let mut out_y = DVector::zeros(rows);
    let mut row_trajectory = Vec::with_capacity(rows);
    let mut r = 0;
    for traj in trajectories {
        if traj.len() < 2 {
            return invalid(format!("trajectory {} has fewer than two samples", traj.id));
        }
        for w in traj.samples.windows(2) {
            inputs[(r, 0)] = w[0].x;
            inputs[(r, 1)] = w[0].y;
            out_x[r] = w[1].x;
            out_y[r] = w[1].y;
            row_trajectory.push(traj.id);
            r += 1;
        }
    }
    Ok(TransitionData {
        x: Dataset::new(inputs.clone(), out_x)?,
        y: Dataset::new(inputs, out_y)?,
        row_trajectory,
    })
}

/// One GP per output coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModelPair {
    pub model_x: GPModel,
    pub model_y: GPModel,
}

impl TransitionModelPair {
    pub fn new(model_x: GPModel, model_y: GPModel) -> Result<Self> {
        if model_x.spec.input_dim()? != 2 || model_y.spec.input_dim()? != 2 {
            return invalid("transition models take 2-D inputs");
        }
        Ok(Self { model_x, model_y })
    }
}

/// Kernel used for both transition GPs.
pub fn transition_kernel() -> KernelSpec {
    KernelSpec::ard_se(2)
}

/// Data-informed starting point `[log σ², log ℓ_1, log ℓ_2, log σ_e²]` for
/// one output dimension.
pub fn transition_init(data: &Dataset) -> Vec<f64> {
    let n = data.len() as f64;
    let y = data.outputs();
    let second_moment = y.iter().map(|v| v * v).sum::<f64>() / n;
    let mean = y.mean();
    let var_y = (second_moment - mean * mean).max(1e-6);
    let mut init = vec![second_moment.max(1e-6).ln()];
    for j in 0..data.dim() {
        let col = data.inputs().column(j);
        let m = col.mean();
        let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / n;
        init.push(v.max(1e-6).ln());
    }
    init.push((1e-2 * var_y).ln());
    init
}

/// Result of training both transition GPs.
#[derive(Debug, Clone)]
pub struct TransitionTraining {
    pub models: TransitionModelPair,
    pub history_x: ConsensusState,
    pub history_y: ConsensusState,
    /// Local gradient evaluations over both dimensions and all clients.
    pub gradient_evals: u64,
    pub converged: bool,
    /// `max_k ‖θ_k − z‖∞` at termination over both dimensions.
    pub consensus_gap: f64,
    /// Secure-sum deviation ratio (deviation over `K·2⁻¹⁶`), when on.
    pub secure_bound_ratio: Option<f64>,
}

struct DimOutcome {
    theta: Vec<f64>,
    state: ConsensusState,
    evals: u64,
    converged: bool,
    gap: f64,
    bound_ratio: Option<f64>,
}

fn train_dimension(local: Vec<Dataset>, pooled: &Dataset, config: &FederationConfig) -> Result<DimOutcome> {
    let spec = transition_kernel();
    let mut cfg = config.clone();
    if cfg.init_center.is_none() {
        cfg.init_center = Some(transition_init(pooled));
    }
    let clients = local
        .into_iter()
        .enumerate()
        .map(|(k, d)| Ok(ClientState::new(k, GpObjective::new(spec.clone(), d)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = run_federation(&cfg, clients)?;
    let gap = out
        .clients
        .iter()
        .map(|c| crate::fed::max_abs_diff(&c.theta, &out.z))
        .fold(0.0, f64::max);
    Ok(DimOutcome {
        evals: out.gradient_evals(),
        converged: out.converged,
        bound_ratio: out.audit.as_ref().map(|a| a.max_bound_ratio),
        theta: out.z,
        state: out.state,
        gap,
    })
}

/// Groups trajectories by owner into `k` client transition sets.
pub fn client_transitions(trajectories: &[Trajectory], k: usize) -> Result<Vec<TransitionData>> {
    (0..k)
        .map(|owner| {
            let own: Vec<Trajectory> = trajectories.iter().filter(|t| t.owner == owner).cloned().collect();
            if own.is_empty() {
                return invalid(format!("client {owner} holds no trajectory"));
            }
            build_transition_dataset(&own)
        })
        .collect()
}

/// Trains both transition GPs federatedly; clients are trajectory owners
/// `0..config.clients`. The x- and y-dimension runs execute in parallel.
pub fn train_transition_federated(trajectories: &[Trajectory], config: &FederationConfig) -> Result<TransitionTraining> {
    let per_client = client_transitions(trajectories, config.clients)?;
    let pooled = build_transition_dataset(trajectories)?;
    let xs: Vec<Dataset> = per_client.iter().map(|c| c.x.clone()).collect();
    let ys: Vec<Dataset> = per_client.iter().map(|c| c.y.clone()).collect();
    let (rx, ry) = rayon::join(|| train_dimension(xs, &pooled.x, config), || train_dimension(ys, &pooled.y, config));
    let (rx, ry) = (rx?, ry?);
    let spec = transition_kernel();
    let models = TransitionModelPair::new(
        GPModel::new(spec.clone(), HyperParamVector::from_log(rx.theta)?)?,
        GPModel::new(spec, HyperParamVector::from_log(ry.theta)?)?,
    )?;
    let secure_bound_ratio = match (rx.bound_ratio, ry.bound_ratio) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    Ok(TransitionTraining {
        models,
        gradient_evals: rx.evals + ry.evals,
        converged: rx.converged && ry.converged,
        consensus_gap: rx.gap.max(ry.gap),
        history_x: rx.state,
        history_y: ry.state,
        secure_bound_ratio,
    })
}

/// Centralized fit of both transition GPs on the pooled data.
pub fn train_transition_centralized(trajectories: &[Trajectory], config: &GradientDescentConfig) -> Result<TransitionModelPair> {
    let pooled = build_transition_dataset(trajectories)?;
    let spec = transition_kernel();
    let fit = |d: &Dataset| -> Result<GPModel> {
        let init = GPModel::new(spec.clone(), HyperParamVector::from_log(transition_init(d))?)?;
        Ok(fit_centralized(&init, d, config)?.model)
    };
    let (mx, my) = rayon::join(|| fit(&pooled.x), || fit(&pooled.y));
    TransitionModelPair::new(mx?, my?)
}

/// Summed local NLL `Σ_k l_k` of both transition models over client datasets.
pub fn summed_local_nll(models: &TransitionModelPair, per_client: &[TransitionData]) -> Result<f64> {
    let mut total = 0.0;
    for c in per_client {
        total += nll(&models.model_x, &c.x)? + nll(&models.model_y, &c.y)?;
    }
    Ok(total)
}

/// Posterior means and variances (columns x, y) of the next state for each
/// row of `queries` (n × 2).
pub fn predict_next_states(
    models: &TransitionModelPair,
    train: &TransitionData,
    queries: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if queries.ncols() != 2 {
        return invalid("next-state queries must have two columns");
    }
    let px = posterior(&models.model_x, &train.x, queries)?;
    let py = posterior(&models.model_y, &train.y, queries)?;
    let n = queries.nrows();
    let mut mean = DMatrix::zeros(n, 2);
    let mut var = DMatrix::zeros(n, 2);
    mean.set_column(0, &px.mean);
    mean.set_column(1, &py.mean);
    var.set_column(0, &px.variances());
    var.set_column(1, &py.variances());
    Ok((mean, var))
}

/// Next-state prediction for one position: 2-D mean and diagonal 2 × 2
/// covariance.
pub fn predict_next_state(
    models: &TransitionModelPair,
    train: &TransitionData,
    state: [f64; 2],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = DMatrix::from_row_slice(1, 2, &state);
    let (m, v) = predict_next_states(models, train, &q)?;
    Ok((
        DVector::from_vec(vec![m[(0, 0)], m[(0, 1)]]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![v[(0, 0)], v[(0, 1)]])),
    ))
}

/// `sqrt(mean ‖predicted − true‖²)` over all one-step transitions.
pub fn rmse_from_predictions(predicted: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if predicted.nrows() == 0 || predicted.shape() != truth.shape() {
        return invalid("rmse needs matching, nonempty prediction and truth matrices");
    }
    let sq: f64 = (predicted - truth).iter().map(|e| e * e).sum();
    Ok((sq / predicted.nrows() as f64).sqrt())
}

/// One-step prediction RMSE in meters over every transition of `test`.
pub fn evaluate_rmse(models: &TransitionModelPair, train: &TransitionData, test: &[Trajectory]) -> Result<f64> {
    if test.is_empty() {
        return invalid("no test trajectories");
    }
    let t = build_transition_dataset(test)?;
    let (mean, _) = predict_next_states(models, train, t.x.inputs())?;
    let mut truth = DMatrix::zeros(t.len(), 2);
    truth.set_column(0, t.x.outputs());
    truth.set_column(1, t.y.outputs());
    rmse_from_predictions(&mean, &truth)
}

/// Random-turn constant-speed walks inside a rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTrajectoryConfig {
    pub n_trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    pub speed: f64,
    /// Heading diffusion in rad/√s.
    pub turn_noise: f64,
    /// Per-step positional noise standard deviation in meters.
    pub process_noise: f64,
    pub width: f64,
    pub height: f64,
    /// Trajectory `i` is owned by client `i mod clients`.
    pub clients: usize,
    pub seed: u64,
}

impl Default for SyntheticTrajectoryConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 45,
            steps: 170,
            dt: 0.5,
            speed: 1.2,
            turn_noise: 0.3,
            process_noise: 0.05,
            width: 30.0,
            height: 15.0,
            clients: 3,
            seed: 0,
        }
    }
}

fn reflect(pos: f64, upper: f64) -> (f64, bool) {
    if pos < 0.0 {
        ((-pos).min(upper), true)
    } else if pos > upper {
        ((2.0 * upper - pos).max(0.0), true)
    } else {
        (pos, false)
    }
}

/// Generates trajectories; deterministic per `config.seed`.
pub fn generate_synthetic_trajectories(config: &SyntheticTrajectoryConfig) -> Result<Vec<Trajectory>> {
    let c = config;
    if !(c.width > 0.0 && c.height > 0.0 && c.width.is_finite() && c.height.is_finite()) {
        return invalid("arena width and height must be positive");
    }
    if c.steps < 2 || c.n_trajectories == 0 || c.clients == 0 {
        return invalid("need at least one trajectory of two steps and one client");
    }
    if !(c.dt > 0.0 && c.speed >= 0.0 && c.turn_noise >= 0.0 && c.process_noise >= 0.0) {
        return invalid("dt must be positive and speed and noises non-negative");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(c.seed);
    let margin_x = (0.05 * c.width).min(1.0);
    let margin_y = (0.05 * c.height).min(1.0);
    let mut out = Vec::with_capacity(c.n_trajectories);
    for id in 0..c.n_trajectories {
        let mut x = rng.gen_range(margin_x..=c.width - margin_x);
        let mut y = rng.gen_range(margin_y..=c.height - margin_y);
        let mut heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut samples = Vec::with_capacity(c.steps);
        samples.push(StateSample { t: 0.0, x, y });
        for i in 1..c.steps {
            heading += c.turn_noise * c.dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            let (rx, hit_x) = reflect(x + c.speed * c.dt * heading.cos() + c.process_noise * nx, c.width);
            let (ry, hit_y) = reflect(y + c.speed * c.dt * heading.sin() + c.process_noise * ny, c.height);
            if hit_x {
                heading = std::f64::consts::PI - heading;
            }
            if hit_y {
                heading = -heading;
            }
            x = rx;
            y = ry;
            samples.push(StateSample { t: i as f64 * c.dt, x, y });
        }
        out.push(Trajectory::new(id, id % c.clients, samples)?);
    }
    Ok(out)
}
