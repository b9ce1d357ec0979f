//! Experiment configuration, data plumbing and end-to-end runs.
//!
//! Every run is a pure function of the configuration (including its seed).
//! Metric files carry the configuration hash and seed; wall-clock columns
//! are written as zero unless `timing = true`, so repeated runs produce
//! byte-identical files.

pub mod io;
pub mod traffic;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fed::{run_federation, ClientState, ConsensusState, FederationConfig, Method, QuadraticObjective};
use crate::gp::{GPModel, GpObjective};
use crate::kernels::{HyperParamVector, KernelSpec};
use crate::optim::{minimize, GradientDescentConfig, SumObjective};
use crate::tracking::{
    build_transition_dataset, client_transitions, evaluate_rmse, generate_synthetic_trajectories, predict_next_states,
    summed_local_nll,
    train_transition_federated, transition_init, transition_kernel, SyntheticTrajectoryConfig, Trajectory,
    TransitionModelPair,
};
use traffic::{
    default_traffic_kernel, forecast, generate_traffic_series, nlpd, nmse, split_series, train_traffic, TrafficModel, TrafficSeries,
    TrafficSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Tracking,
    Traffic,
    QuadraticOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSettings {
    pub synthetic: SyntheticTrajectoryConfig,
    pub test_trajectories: usize,
    /// Training trajectories CSV; generated when absent.
    pub train_csv: Option<PathBuf>,
    /// Test trajectories CSV; generated when absent.
    pub test_csv: Option<PathBuf>,
    /// Add a centralized fit of the summed local objective to comparisons.
    pub centralized: bool,
    pub centralized_optimizer: GradientDescentConfig,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        Self {
            synthetic: SyntheticTrajectoryConfig { steps: 14, ..Default::default() },
            test_trajectories: 10,
            train_csv: None,
            test_csv: None,
            centralized: true,
            centralized_optimizer: GradientDescentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub client_counts: Vec<usize>,
    /// Centers `a_k` are drawn uniformly from `[-spread, spread]`.
    pub spread: f64,
    /// Pass threshold on `|z − mean(a_k)|`.
    pub accuracy: f64,
    pub max_rounds: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { client_counts: vec![2, 3, 10], spread: 5.0, accuracy: 1e-5, max_rounds: 5000 }
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Record wall-clock times in metric files.
    #[serde(default)]
    pub timing: bool,
    /// Methods run by `compare`.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Kernel for the traffic task; tracking always uses a 2-D ARD kernel.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub tracking: TrackingSettings,
    #[serde(default)]
    pub traffic: TrafficSettings,
    #[serde(default)]
    pub oracle: OracleSettings,
}

/// Traffic defaults. The log-period direction of the periodic kernel is
/// stiff: the inner solver and round count are capped, pxADMM gets a larger
/// `L` and FedAvg/FedProx take small local steps.
pub fn traffic_federation() -> FederationConfig {
    FederationConfig {
        method: Method::Cadmm,
        clients: 4,
        lipschitz: 1e6,
        learning_rate: 1e-6,
        max_rounds: 25,
        inner: crate::fed::InnerSolverConfig { tolerance: 1e-4, max_iters: 20 },
        ..Default::default()
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Pxadmm, Method::Cadmm]
}

impl ExperimentConfig {
    /// Defaults for `task`: K = 3 pxADMM for tracking; K = 4 cADMM with a
    /// bounded round budget for traffic.
    pub fn for_task(task: Task, seed: u64) -> Self {
        let federation = match task {
            Task::Traffic => traffic_federation(),
            _ => FederationConfig::default(),
        };
        Self {
            task,
            seed,
            output_dir: None,
            timing: false,
            methods: default_methods(),
            kernel: None,
            federation,
            tracking: TrackingSettings::default(),
            traffic: TrafficSettings::default(),
            oracle: OracleSettings::default(),
        }
    }

    /// Parses a configuration; omitted keys take the defaults of its task.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = text.parse().map_err(|e| cfg_err(&e))?;
        let task: Task = match user.get("task") {
            Some(v) => v.clone().try_into().map_err(|e| cfg_err(&e))?,
            None => return Err(Error::Config("missing field `task`".into())),
        };
        let mut base = toml::Table::try_from(Self::for_task(task, 0)).map_err(|e| cfg_err(&e))?;
        base.remove("seed");
        merge_tables(&mut base, user);
        toml::Value::Table(base).try_into().map_err(|e| cfg_err(&e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.tracking.train_csv, &mut cfg.tracking.test_csv, &mut cfg.traffic.csv]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.federation.validate().map_err(|e| Error::Config(e.to_string()))?;
        for p in [&self.tracking.train_csv, &self.tracking.test_csv, &self.traffic.csv].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        if let Some(k) = &self.kernel {
            k.input_dim().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: None, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// `config_hash=… seed=…`, used as the comment line of emitted CSVs.
    pub fn stamp(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.seed)
    }

    /// Federation settings with the experiment seed applied.
    pub fn federation_for(&self, method: Method) -> FederationConfig {
        FederationConfig { method, seed: self.seed, ..self.federation.clone() }
    }

    pub fn traffic_kernel(&self) -> KernelSpec {
        self.kernel.clone().unwrap_or_else(default_traffic_kernel)
    }

    fn wall(&self, ms: f64) -> f64 {
        if self.timing {
            ms
        } else {
            0.0
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Training and test trajectories of a tracking configuration.
pub fn tracking_data(cfg: &ExperimentConfig) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let k = cfg.federation.clients;
    let synth = SyntheticTrajectoryConfig { clients: k, seed: cfg.seed, ..cfg.tracking.synthetic.clone() };
    let train = match &cfg.tracking.train_csv {
        Some(p) => io::read_trajectories(p, k)?,
        None => generate_synthetic_trajectories(&synth)?,
    };
    let test = match &cfg.tracking.test_csv {
        Some(p) => io::read_trajectories(p, k)?,
        None => generate_synthetic_trajectories(&SyntheticTrajectoryConfig {
            n_trajectories: cfg.tracking.test_trajectories.max(1),
            seed: cfg.seed.wrapping_add(1),
            ..synth
        })?,
    };
    Ok((train, test))
}

/// One row of a method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    /// Summed local NLL of both transition models.
    pub final_nll: f64,
    pub rmse: f64,
    pub rounds: usize,
    pub gradient_evals: u64,
    pub wall_ms: f64,
    pub consensus_gap: f64,
    pub converged: bool,
    pub theta_x: Vec<f64>,
    pub theta_y: Vec<f64>,
}

/// Result of one tracking method, with its models and histories.
#[derive(Debug, Clone)]
pub struct TrackingRun {
    pub metrics: MethodMetrics,
    pub models: TransitionModelPair,
    pub history_x: Option<ConsensusState>,
    pub history_y: Option<ConsensusState>,
    /// Worst secure-sum deviation relative to `K · 2⁻¹⁶`, when secure aggregation was on.
    pub secure_bound_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub clients: usize,
    pub training_rows: usize,
    pub secure_agg: bool,
    pub rows: Vec<MethodMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrackingReport {
    pub metrics: TrackingMetrics,
    pub runs: Vec<TrackingRun>,
}

/// Trains transition models with one federated method.
pub fn run_tracking_method(
    cfg: &ExperimentConfig,
    method: Method,
    train: &[Trajectory],
    test: &[Trajectory],
) -> Result<TrackingRun> {
    let started = Instant::now();
    let fed = cfg.federation_for(method);
    let result = train_transition_federated(train, &fed)?;
    let wall = elapsed_ms(started);
    let per_client = client_transitions(train, fed.clients)?;
    let pooled = build_transition_dataset(train)?;
    let metrics = MethodMetrics {
        method: method.name().to_string(),
        final_nll: summed_local_nll(&result.models, &per_client)?,
        rmse: evaluate_rmse(&result.models, &pooled, test)?,
        rounds: result.history_x.round.max(result.history_y.round),
        gradient_evals: result.gradient_evals,
        wall_ms: cfg.wall(wall),
        consensus_gap: result.consensus_gap,
        converged: result.converged,
        theta_x: result.models.model_x.theta.as_slice().to_vec(),
        theta_y: result.models.model_y.theta.as_slice().to_vec(),
    };
    Ok(TrackingRun {
        metrics,
        models: result.models,
        history_x: Some(result.history_x),
        history_y: Some(result.history_y),
        secure_bound_ratio: result.secure_bound_ratio,
    })
}

/// Centralized minimization of the summed local objective `Σ_k l_k`.
pub fn run_tracking_centralized(cfg: &ExperimentConfig, train: &[Trajectory], test: &[Trajectory]) -> Result<TrackingRun> {
    let started = Instant::now();
    let k = cfg.federation.clients;
    let per_client = client_transitions(train, k)?;
    let pooled = build_transition_dataset(train)?;
    let spec = transition_kernel();
    let fit = |dim: usize| -> Result<(GPModel, usize, u64, bool)> {
        let parts = per_client
            .iter()
            .map(|c| GpObjective::new(spec.clone(), if dim == 0 { c.x.clone() } else { c.y.clone() }))
            .collect::<Result<Vec<_>>>()?;
        let init = transition_init(if dim == 0 { &pooled.x } else { &pooled.y });
        let r = minimize(&SumObjective { parts }, &init, &cfg.tracking.centralized_optimizer)?;
        let model = GPModel::new(spec.clone(), HyperParamVector::from_log(r.theta)?)?;
        Ok((model, r.iterations, (r.gradient_evals * k) as u64, r.converged))
    };
    let (mx, ix, ex, cx) = fit(0)?;
    let (my, iy, ey, cy) = fit(1)?;
    let models = TransitionModelPair::new(mx, my)?;
    let wall = elapsed_ms(started);
    let metrics = MethodMetrics {
        method: "centralized".into(),
        final_nll: summed_local_nll(&models, &per_client)?,
        rmse: evaluate_rmse(&models, &pooled, test)?,
        rounds: ix.max(iy),
        gradient_evals: ex + ey,
        wall_ms: cfg.wall(wall),
        consensus_gap: 0.0,
        converged: cx && cy,
        theta_x: models.model_x.theta.as_slice().to_vec(),
        theta_y: models.model_y.theta.as_slice().to_vec(),
    };
    Ok(TrackingRun { metrics, models, history_x: None, history_y: None, secure_bound_ratio: None })
}

/// Runs every method in `methods` (plus the centralized reference when
/// enabled) on the same trajectories.
pub fn run_tracking_experiment(cfg: &ExperimentConfig, methods: &[Method]) -> Result<TrackingReport> {
    let (train, test) = tracking_data(cfg)?;
    let mut runs = Vec::new();
    for &m in methods {
        log::info!("tracking: training with {m}");
        runs.push(run_tracking_method(cfg, m, &train, &test)?);
    }
    if cfg.tracking.centralized {
        log::info!("tracking: centralized reference");
        runs.push(run_tracking_centralized(cfg, &train, &test)?);
    }
    let metrics = TrackingMetrics {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        task: Task::Tracking,
        clients: cfg.federation.clients,
        training_rows: build_transition_dataset(&train)?.len(),
        secure_agg: cfg.federation.secure_agg,
        rows: runs.iter().map(|r| r.metrics.clone()).collect(),
    };
    Ok(TrackingReport { metrics, runs })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn history_rows(state: &ConsensusState, timing: bool) -> Vec<Vec<String>> {
    state
        .history
        .iter()
        .map(|r| {
            vec![
                r.round.to_string(),
                fmt_f64(r.objective),
                fmt_f64(r.consensus_gap),
                fmt_f64(if timing { r.wall_ms } else { 0.0 }),
                r.participants.to_string(),
                r.gradient_evals.to_string(),
            ]
        })
        .collect()
}

const HISTORY_HEADER: [&str; 6] = ["round", "objective", "consensus_gap", "wall_ms", "participants", "gradient_evals"];

/// Writes a per-round history CSV.
pub fn write_history(path: &Path, state: &ConsensusState, cfg: &ExperimentConfig) -> Result<()> {
    io::write_rows(path, &HISTORY_HEADER, &history_rows(state, cfg.timing), Some(&cfg.stamp()))
}

impl TrackingReport {
    /// `metrics.json`, `comparison.csv` and per-method histories.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        io::write_json(&dir.join("metrics.json"), &self.metrics)?;
        let rows: Vec<Vec<String>> = self
            .metrics
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    fmt_f64(r.final_nll),
                    fmt_f64(r.rmse),
                    r.rounds.to_string(),
                    r.gradient_evals.to_string(),
                    fmt_f64(r.wall_ms),
                    fmt_f64(r.consensus_gap),
                    r.converged.to_string(),
                ]
            })
            .collect();
        io::write_rows(
            &dir.join("comparison.csv"),
            &["method", "final_nll", "rmse", "rounds", "gradient_evals", "wall_ms", "consensus_gap", "converged"],
            &rows,
            Some(&cfg.stamp()),
        )?;
        for run in &self.runs {
            if let (Some(hx), Some(hy)) = (&run.history_x, &run.history_y) {
                write_history(&dir.join(format!("history_{}_x.csv", run.metrics.method)), hx, cfg)?;
                write_history(&dir.join(format!("history_{}_y.csv", run.metrics.method)), hy, cfg)?;
            }
        }
        Ok(())
    }
}

/// Serializes both transition models as one TOML document.
pub fn transition_models_to_toml(models: &TransitionModelPair) -> Result<String> {
    toml::to_string(models).map_err(|e| Error::Config(e.to_string()))
}

pub fn transition_models_from_toml(text: &str) -> Result<TransitionModelPair> {
    let m: TransitionModelPair = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    TransitionModelPair::new(
        GPModel::new(m.model_x.spec, m.model_x.theta)?,
        GPModel::new(m.model_y.spec, m.model_y.theta)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingEval {
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub final_nll: f64,
    pub rmse: f64,
    pub test_transitions: usize,
}

/// Scores trained transition models on the configuration's data.
pub fn evaluate_tracking(cfg: &ExperimentConfig, models: &TransitionModelPair) -> Result<TrackingEval> {
    let (train, test) = tracking_data(cfg)?;
    let per_client = client_transitions(&train, cfg.federation.clients)?;
    let pooled = build_transition_dataset(&train)?;
    Ok(TrackingEval {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        task: Task::Tracking,
        final_nll: summed_local_nll(models, &per_client)?,
        rmse: evaluate_rmse(models, &pooled, &test)?,
        test_transitions: build_transition_dataset(&test)?.len(),
    })
}

/// Writes one-step predictions for every test transition with 95% bands.
pub fn write_tracking_predictions(path: &Path, cfg: &ExperimentConfig, models: &TransitionModelPair) -> Result<()> {
    let (train, test) = tracking_data(cfg)?;
    let pooled = build_transition_dataset(&train)?;
    let t = build_transition_dataset(&test)?;
    let (mean, var) = predict_next_states(models, &pooled, t.x.inputs())?;
    let ids: Vec<(usize, f64)> = test
        .iter()
        .flat_map(|tr| tr.samples()[..tr.len() - 1].iter().map(move |s| (tr.id, s.t)))
        .collect();
    let mut rows = Vec::with_capacity(t.len());
    for (i, (id, time)) in ids.iter().enumerate() {
        let mut row = vec![id.to_string(), fmt_f64(*time), fmt_f64(t.x.outputs()[i]), fmt_f64(t.y.outputs()[i])];
        for d in 0..2 {
            let (m, sd) = (mean[(i, d)], var[(i, d)].sqrt());
            row.extend([fmt_f64(m), fmt_f64(sd), fmt_f64(m - 1.96 * sd), fmt_f64(m + 1.96 * sd)]);
        }
        rows.push(row);
    }
    io::write_rows(
        path,
        &[
            "trajectory", "t", "next_x", "next_y", "mean_x", "std_x", "lower95_x", "upper95_x", "mean_y", "std_y",
            "lower95_y", "upper95_y",
        ],
        &rows,
        Some(&cfg.stamp()),
    )
}

/// The traffic series selected by the configuration.
pub fn traffic_series(cfg: &ExperimentConfig) -> Result<TrafficSeries> {
    match &cfg.traffic.csv {
        Some(p) => {
            let all = io::read_traffic(p)?;
            match cfg.traffic.station {
                Some(id) => all
                    .into_iter()
                    .find(|s| s.station_id == id)
                    .ok_or_else(|| Error::Config(format!("station {id} not found in {}", p.display()))),
                None => Ok(all.into_iter().next().expect("reader returns at least one series")),
            }
        }
        None => generate_traffic_series(&traffic::TrafficConfig { seed: cfg.seed, ..cfg.traffic.synthetic.clone() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficMetrics {
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub method: String,
    pub clients: usize,
    pub secure_agg: bool,
    pub nmse: f64,
    pub persistence_nmse: f64,
    pub beats_persistence: bool,
    pub nlpd: f64,
    pub fusion_weights: Vec<f64>,
    pub theta: Vec<f64>,
    pub rounds: usize,
    pub gradient_evals: u64,
    pub consensus_gap: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrafficReport {
    pub metrics: TrafficMetrics,
    pub history: ConsensusState,
    pub model: GPModel,
    pub test_t: Vec<f64>,
    pub test_y: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub secure_bound_ratio: Option<f64>,
}

/// Splits the series into K blocks, trains with `method`, and forecasts the
/// held-out horizon by gPoE over the local posteriors.
pub fn run_traffic_experiment(cfg: &ExperimentConfig, method: Method) -> Result<TrafficReport> {
    let started = Instant::now();
    let series = traffic_series(cfg)?;
    let split = split_series(&series, cfg.traffic.horizon_hours, cfg.traffic.validation_hours)?;
    let spec = cfg.traffic_kernel();
    let fed = cfg.federation_for(method);
    let model = train_traffic(&split, &spec, &fed, cfg.traffic.split)?;
    let fc = forecast(&model, &split, &cfg.traffic.fusion)?;
    let nmse_v = nmse(&fc.mean, &split.test_y);
    let persistence = nmse(&split.persistence, &split.test_y);
    let metrics = TrafficMetrics {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        task: Task::Traffic,
        method: method.name().to_string(),
        clients: fed.clients,
        secure_agg: fed.secure_agg,
        nmse: nmse_v,
        persistence_nmse: persistence,
        beats_persistence: nmse_v < persistence,
        nlpd: nlpd(&fc.mean, &fc.variance, &split.test_y),
        fusion_weights: fc.weights.as_slice().to_vec(),
        theta: model.model.theta.as_slice().to_vec(),
        rounds: model.history.round,
        gradient_evals: model.gradient_evals,
        consensus_gap: model.consensus_gap,
        converged: model.converged,
        wall_ms: cfg.wall(elapsed_ms(started)),
    };
    Ok(TrafficReport {
        metrics,
        history: model.history,
        model: model.model,
        test_t: split.test_t,
        test_y: split.test_y,
        mean: fc.mean,
        variance: fc.variance,
        secure_bound_ratio: model.secure_bound_ratio,
    })
}

/// Forecasts with an already trained GP, splitting the training rows the
/// same way training did.
pub fn run_traffic_with_model(cfg: &ExperimentConfig, model: GPModel) -> Result<TrafficReport> {
    let series = traffic_series(cfg)?;
    let split = split_series(&series, cfg.traffic.horizon_hours, cfg.traffic.validation_hours)?;
    let tm = TrafficModel::from_trained(model, &split, cfg.federation.clients, cfg.traffic.split, cfg.seed)?;
    let fc = forecast(&tm, &split, &cfg.traffic.fusion)?;
    let nmse_v = nmse(&fc.mean, &split.test_y);
    let persistence = nmse(&split.persistence, &split.test_y);
    let metrics = TrafficMetrics {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        task: Task::Traffic,
        method: "loaded".into(),
        clients: cfg.federation.clients,
        secure_agg: false,
        nmse: nmse_v,
        persistence_nmse: persistence,
        beats_persistence: nmse_v < persistence,
        nlpd: nlpd(&fc.mean, &fc.variance, &split.test_y),
        fusion_weights: fc.weights.as_slice().to_vec(),
        theta: tm.model.theta.as_slice().to_vec(),
        rounds: 0,
        gradient_evals: 0,
        consensus_gap: 0.0,
        converged: false,
        wall_ms: 0.0,
    };
    Ok(TrafficReport {
        metrics,
        history: tm.history,
        model: tm.model,
        test_t: split.test_t,
        test_y: split.test_y,
        mean: fc.mean,
        variance: fc.variance,
        secure_bound_ratio: None,
    })
}

impl TrafficReport {
    /// `metrics.json`, `history.csv` and `predictions.csv` (mean with a
    /// 95% band of ±1.96 standard deviations).
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        io::write_json(&dir.join("metrics.json"), &self.metrics)?;
        write_history(&dir.join("history.csv"), &self.history, cfg)?;
        let rows: Vec<Vec<String>> = self
            .test_t
            .iter()
            .zip(&self.test_y)
            .zip(self.mean.iter().zip(&self.variance))
            .map(|((t, y), (m, v))| {
                let sd = v.sqrt();
                vec![fmt_f64(*t), fmt_f64(*y), fmt_f64(*m), fmt_f64(sd), fmt_f64(m - 1.96 * sd), fmt_f64(m + 1.96 * sd)]
            })
            .collect();
        io::write_rows(
            &dir.join("predictions.csv"),
            &["t_hours", "truth", "mean", "std", "lower95", "upper95"],
            &rows,
            Some(&cfg.stamp()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficComparison {
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub rows: Vec<TrafficMetrics>,
}

/// Runs the traffic experiment once per method on the same series.
pub fn run_traffic_comparison(cfg: &ExperimentConfig, methods: &[Method]) -> Result<(TrafficComparison, Vec<TrafficReport>)> {
    let mut reports = Vec::new();
    for &m in methods {
        log::info!("traffic: training with {m}");
        reports.push(run_traffic_experiment(cfg, m)?);
    }
    let cmp = TrafficComparison {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        task: Task::Traffic,
        rows: reports.iter().map(|r| r.metrics.clone()).collect(),
    };
    Ok((cmp, reports))
}

impl TrafficComparison {
    /// `metrics.json`, `comparison.csv` and one history per method.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig, reports: &[TrafficReport]) -> Result<()> {
        io::write_json(&dir.join("metrics.json"), self)?;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    fmt_f64(r.nmse),
                    fmt_f64(r.persistence_nmse),
                    fmt_f64(r.nlpd),
                    r.rounds.to_string(),
                    r.gradient_evals.to_string(),
                    fmt_f64(r.wall_ms),
                    fmt_f64(r.consensus_gap),
                    r.converged.to_string(),
                ]
            })
            .collect();
        io::write_rows(
            &dir.join("comparison.csv"),
            &[
                "method", "nmse", "persistence_nmse", "nlpd", "rounds", "gradient_evals", "wall_ms", "consensus_gap",
                "converged",
            ],
            &rows,
            Some(&cfg.stamp()),
        )?;
        for r in reports {
            write_history(&dir.join(format!("history_{}.csv", r.metrics.method)), &r.history, cfg)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub method: String,
    pub clients: usize,
    pub target: f64,
    pub z: f64,
    pub error: f64,
    pub rounds: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub rows: Vec<OracleRow>,
    pub all_passed: bool,
}

/// Federation settings under which each method solves scalar quadratics
/// `(θ − a_k)²` to high accuracy.
pub fn oracle_federation(method: Method, clients: usize, seed: u64, max_rounds: usize) -> FederationConfig {
    let base = FederationConfig {
        method,
        clients,
        seed,
        max_rounds,
        rho: 1.0,
        lipschitz: 2.0,
        learning_rate: 0.1,
        local_iters: 1,
        init_spread: 1.0,
        ..Default::default()
    };
    match method {
        Method::Cadmm => FederationConfig {
            tolerance: 1e-10,
            inner: crate::fed::InnerSolverConfig { tolerance: 1e-10, max_iters: 200 },
            ..base
        },
        Method::Pxadmm => FederationConfig { tolerance: 1e-10, ..base },
        Method::Fedavg => FederationConfig { tolerance: 1e-14, ..base },
        Method::Fedprox => FederationConfig { tolerance: 1e-14, prox_mu: 0.5, ..base },
    }
}

/// Every method on every client count, with seeded centers `a_k`.
pub fn run_quadratic_oracle(cfg: &ExperimentConfig, methods: &[Method]) -> Result<OracleMetrics> {
    let s = &cfg.oracle;
    let mut rows = Vec::new();
    for &k in &s.client_counts {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ k as u64);
        let centers: Vec<f64> = (0..k).map(|_| rng.gen_range(-s.spread..=s.spread)).collect();
        let target = centers.iter().sum::<f64>() / k as f64;
        for &m in methods {
            let fed = FederationConfig {
                secure_agg: cfg.federation.secure_agg,
                ..oracle_federation(m, k, cfg.seed, s.max_rounds)
            };
            let clients = centers
                .iter()
                .enumerate()
                .map(|(i, &a)| ClientState::new(i, QuadraticObjective::new(vec![a])))
                .collect();
            let out = run_federation(&fed, clients)?;
            let error = (out.z[0] - target).abs();
            rows.push(OracleRow {
                method: m.name().into(),
                clients: k,
                target,
                z: out.z[0],
                error,
                rounds: out.state.round,
                passed: error < s.accuracy,
            });
        }
    }
    let all_passed = rows.iter().all(|r| r.passed);
    Ok(OracleMetrics { config_hash: cfg.hash(), seed: cfg.seed, task: Task::QuadraticOracle, rows, all_passed })
}

impl OracleMetrics {
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        io::write_json(&dir.join("metrics.json"), self)?;
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.clients.to_string(),
                    fmt_f64(r.target),
                    fmt_f64(r.z),
                    fmt_f64(r.error),
                    r.rounds.to_string(),
                    r.passed.to_string(),
                ]
            })
            .collect();
        io::write_rows(
            &dir.join("oracle.csv"),
            &["method", "clients", "target", "z", "error", "rounds", "passed"],
            &rows,
            Some(&cfg.stamp()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(ExperimentConfig::from_toml("task = \"tracking\"\n"), Err(Error::Config(_))));
        let c = ExperimentConfig::from_toml("task = \"tracking\"\nseed = 4\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.federation.rho, 500.0);
    }

    #[test]
    fn file_defaults_follow_the_task() {
        let c = ExperimentConfig::from_toml("task = \"traffic\"\nseed = 1\n[federation]\nrho = 20.0\n").unwrap();
        let expected = ExperimentConfig { federation: FederationConfig { rho: 20.0, ..traffic_federation() }, ..ExperimentConfig::for_task(Task::Traffic, 1) };
        assert_eq!(c, expected);
        assert!(ExperimentConfig::from_toml("task = \"traffic\"\nseed = 1\n[federation]\nbogus = 1\n").is_err());
    }

    #[test]
    fn config_roundtrip_and_hash() {
        let mut c = ExperimentConfig::for_task(Task::Traffic, 9);
        c.kernel = Some(default_traffic_kernel());
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.output_dir = Some("elsewhere".into());
        assert_eq!(back.hash(), c.hash());
        c.seed = 10;
        assert_ne!(back.hash(), c.hash());
    }

    #[test]
    fn transition_models_roundtrip() {
        let k = transition_kernel();
        let m = |v: f64| GPModel::new(k.clone(), HyperParamVector::from_log(vec![v, 0.1, -0.2, -3.0]).unwrap()).unwrap();
        let pair = TransitionModelPair::new(m(0.5), m(1.5)).unwrap();
        let text = transition_models_to_toml(&pair).unwrap();
        assert_eq!(transition_models_from_toml(&text).unwrap(), pair);
        assert!(transition_models_from_toml("model_x = 3").is_err());
    }

    #[test]
    fn missing_data_file_is_a_config_error() {
        let mut c = ExperimentConfig::for_task(Task::Tracking, 1);
        c.tracking.train_csv = Some("/nonexistent/train.csv".into());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_passes_for_all_methods() {
        let cfg = ExperimentConfig::for_task(Task::QuadraticOracle, 3);
        let m = run_quadratic_oracle(&cfg, &Method::ALL).unwrap();
        assert!(m.all_passed, "{:?}", m.rows);
        assert_eq!(m.rows.len(), 12);
    }
}
