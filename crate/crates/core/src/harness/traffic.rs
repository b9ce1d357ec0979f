//! Synthetic cell-traffic series and the federated forecasting experiment.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fed::{run_federation, split_indices, ClientState, ConsensusState, FederationConfig, SplitScheme};
use crate::fusion::{gpoe_fuse, optimize_fusion_weights, ExpertPrediction, FusionConfig, FusionWeights};
use crate::gp::{posterior, Dataset, GPModel, GaussianPrediction, GpObjective};
use crate::kernels::{HyperParamVector, KernelSpec};

/// Resource-block usage of one station, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSeries {
    pub station_id: u64,
    /// `(t in hours, usage in [0, 100])`, strictly increasing in `t`.
    pub samples: Vec<(f64, f64)>,
}

impl TrafficSeries {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return invalid("traffic series is empty");
        }
        for (i, &(t, u)) in self.samples.iter().enumerate() {
            if !t.is_finite() || !(0.0..=100.0).contains(&u) {
                return invalid(format!("sample {i}: time must be finite and usage within [0, 100]"));
            }
            if i > 0 && !(t > self.samples[i - 1].0) {
                return invalid(format!("sample {i}: time does not increase"));
            }
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }
}

/// Daily sinusoid plus weekly modulation with a smooth weekend dip, plus
/// white noise, clipped to `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub days: usize,
    pub samples_per_day: usize,
    pub base: f64,
    pub daily_amp: f64,
    pub weekly_amp: f64,
    /// Depth of the weekend dip.
    pub weekend_contrast: f64,
    pub noise: f64,
    pub station_id: u64,
    pub seed: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            days: 30,
            samples_per_day: 24,
            base: 50.0,
            daily_amp: 20.0,
            weekly_amp: 5.0,
            weekend_contrast: 10.0,
            noise: 2.0,
            station_id: 0,
            seed: 0,
        }
    }
}

/// Concentration of the weekend bump; larger is narrower.
const WEEKEND_KAPPA: f64 = 6.0;
/// Center of the weekend bump within the week, in days from t = 0.
const WEEKEND_CENTER_DAY: f64 = 6.0;

/// Generates the series; deterministic per `config.seed`.
///
/// Phases come from the integer sample index, so the noise-free part
/// repeats exactly every `7 · samples_per_day` samples.
pub fn generate_traffic_series(config: &TrafficConfig) -> Result<TrafficSeries> {
    let c = config;
    if c.days == 0 || c.samples_per_day == 0 {
        return invalid("traffic series needs at least one day and one sample per day");
    }
    let amps = [c.daily_amp, c.weekly_amp, c.weekend_contrast, c.noise];
    if amps.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || !c.base.is_finite() {
        return invalid("traffic amplitudes and noise must be finite and non-negative");
    }
    let swing = c.daily_amp + c.weekly_amp + c.weekend_contrast;
    if c.base - swing < 0.0 || c.base + swing > 100.0 {
        return invalid(format!("base {} ± amplitude sum {swing} leaves the [0, 100] range", c.base));
    }
    let noise = Normal::new(0.0, c.noise).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(c.seed);
    let per_week = 7 * c.samples_per_day;
    let hours_per_sample = 24.0 / c.samples_per_day as f64;
    let samples = (0..c.days * c.samples_per_day)
        .map(|i| {
            let day_phase = 2.0 * PI * (i % c.samples_per_day) as f64 / c.samples_per_day as f64;
            let week_phase = 2.0 * PI * (i % per_week) as f64 / per_week as f64;
            let weekend_phase = week_phase - 2.0 * PI * WEEKEND_CENTER_DAY / 7.0;
            let weekend = (WEEKEND_KAPPA * (weekend_phase.cos() - 1.0)).exp();
            // Daily peak in the early afternoon.
            let clean = c.base + c.daily_amp * (day_phase - PI / 2.0 - 0.6).sin() + c.weekly_amp * week_phase.sin()
                - c.weekend_contrast * weekend;
            let eps = if c.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (i as f64 * hours_per_sample, (clean + eps).clamp(0.0, 100.0))
        })
        .collect();
    Ok(TrafficSeries { station_id: c.station_id, samples })
}

/// Sample autocorrelation at `lag` samples.
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    if lag >= n {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag).map(|i| (values[i] - mean) * (values[i + lag] - mean)).sum();
    cov / var
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficSplit {
    /// K consecutive time blocks.
    Contiguous,
    /// Rows assigned by a seeded Dirichlet(1) draw.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSettings {
    pub synthetic: TrafficConfig,
    /// Series CSV; the synthetic generator is used when absent.
    pub csv: Option<std::path::PathBuf>,
    /// Station to use from the CSV; the first one when absent.
    pub station: Option<u64>,
    pub horizon_hours: f64,
    /// Window before the horizon used to fit the fusion weights.
    pub validation_hours: f64,
    pub split: TrafficSplit,
    pub fusion: FusionConfig,
}

impl Default for TrafficSettings {
    fn default() -> Self {
        Self {
            synthetic: TrafficConfig::default(),
            csv: None,
            station: None,
            horizon_hours: 24.0,
            validation_hours: 24.0,
            split: TrafficSplit::Contiguous,
            fusion: FusionConfig::default(),
        }
    }
}

/// Periodic plus squared-exponential kernel on time in hours.
pub fn default_traffic_kernel() -> KernelSpec {
    KernelSpec::sum(vec![KernelSpec::periodic(1), KernelSpec::ard_se(1)])
}

/// Starting point for a kernel on standardized traffic outputs (noise last).
pub fn traffic_init(spec: &KernelSpec) -> Vec<f64> {
    if *spec == default_traffic_kernel() {
        // Daily period; the trend term has a two-day length scale (squared form).
        vec![0.5f64.ln(), 0.0, 24f64.ln(), 0.5f64.ln(), (48.0f64 * 48.0).ln(), 0.05f64.ln()]
    } else {
        let mut v = spec.unit_params().into_inner();
        v.push(0.1f64.ln());
        v
    }
}

/// Train / validation / test rows of a series.
#[derive(Debug, Clone)]
pub struct TrafficSplitData {
    pub train_t: Vec<f64>,
    pub train_y: Vec<f64>,
    pub valid_t: Vec<f64>,
    pub valid_y: Vec<f64>,
    pub test_t: Vec<f64>,
    pub test_y: Vec<f64>,
    /// Persistence forecast `y(t − 24 h)` for each test time.
    pub persistence: Vec<f64>,
}

pub fn split_series(series: &TrafficSeries, horizon_hours: f64, validation_hours: f64) -> Result<TrafficSplitData> {
    series.validate()?;
    if !(horizon_hours > 0.0 && validation_hours >= 0.0) {
        return invalid("horizon must be positive and validation window non-negative");
    }
    let t = series.times();
    let y = series.values();
    let end = *t.last().expect("validated nonempty");
    let test_start = t.partition_point(|&v| v <= end - horizon_hours);
    let valid_start = t.partition_point(|&v| v <= end - horizon_hours - validation_hours);
    if valid_start < 2 || test_start == t.len() {
        return invalid(format!(
            "horizon {horizon_hours} h plus validation {validation_hours} h leaves too little training data"
        ));
    }
    let mut persistence = Vec::with_capacity(t.len() - test_start);
    for &tt in &t[test_start..] {
        let target = tt - 24.0;
        let j = t.partition_point(|&v| v < target - 1e-9);
        if j >= t.len() || (t[j] - target).abs() > 1e-6 {
            return invalid(format!("no sample 24 h before t = {tt} for the persistence baseline"));
        }
        persistence.push(y[j]);
    }
    Ok(TrafficSplitData {
        train_t: t[..valid_start].to_vec(),
        train_y: y[..valid_start].to_vec(),
        valid_t: t[valid_start..test_start].to_vec(),
        valid_y: y[valid_start..test_start].to_vec(),
        test_t: t[test_start..].to_vec(),
        test_y: y[test_start..].to_vec(),
        persistence,
    })
}

/// `mean((ŷ − y)²) / var(y)`.
pub fn nmse(pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    mse / var.max(f64::MIN_POSITIVE)
}

/// Mean negative log predictive density of Gaussian predictions.
pub fn nlpd(mean: &[f64], var: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    mean.iter()
        .zip(var)
        .zip(truth)
        .map(|((m, v), y)| 0.5 * (2.0 * PI * v).ln() + (y - m) * (y - m) / (2.0 * v))
        .sum::<f64>()
        / n
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Trained traffic model with everything needed to forecast.
#[derive(Debug, Clone)]
pub struct TrafficModel {
    pub model: GPModel,
    pub local: Vec<Dataset>,
    pub y_mean: f64,
    pub y_scale: f64,
    pub history: ConsensusState,
    pub converged: bool,
    pub gradient_evals: u64,
    pub consensus_gap: f64,
    pub secure_bound_ratio: Option<f64>,
}

impl TrafficModel {
    /// Local posteriors at `t`, in standardized units.
    pub fn expert_predictions(&self, t: &[f64]) -> Result<Vec<GaussianPrediction>> {
        let x = column(t);
        self.local.iter().map(|d| posterior(&self.model, d, &x)).collect()
    }
}

/// Standardized training rows split into `k` local datasets, with the
/// output mean and scale.
pub fn local_traffic_data(
    split: &TrafficSplitData,
    k: usize,
    scheme: TrafficSplit,
    seed: u64,
) -> Result<(Vec<Dataset>, f64, f64)> {
    let n = split.train_y.len() as f64;
    let y_mean = split.train_y.iter().sum::<f64>() / n;
    let y_scale = (split.train_y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n).sqrt().max(1e-12);
    let ys: Vec<f64> = split.train_y.iter().map(|v| (v - y_mean) / y_scale).collect();
    let all = Dataset::new(column(&split.train_t), DVector::from_vec(ys))?;
    let scheme = match scheme {
        TrafficSplit::Contiguous => SplitScheme::Equal,
        TrafficSplit::Random => SplitScheme::Dirichlet { alpha: 1.0, seed },
    };
    let local: Vec<Dataset> = split_indices(all.len(), k, &scheme, None)?
        .iter()
        .map(|rows| all.select(rows))
        .collect::<Result<_>>()?;
    Ok((local, y_mean, y_scale))
}

impl TrafficModel {
    /// Wraps an already trained GP (for example one loaded from disk) so it
    /// can forecast; training statistics are left empty.
    pub fn from_trained(model: GPModel, split: &TrafficSplitData, k: usize, scheme: TrafficSplit, seed: u64) -> Result<Self> {
        if model.spec.input_dim()? != 1 {
            return invalid("traffic kernel must take a 1-D time input");
        }
        let (local, y_mean, y_scale) = local_traffic_data(split, k, scheme, seed)?;
        Ok(Self {
            history: ConsensusState::new(model.theta.as_slice().to_vec()),
            model,
            local,
            y_mean,
            y_scale,
            converged: false,
            gradient_evals: 0,
            consensus_gap: 0.0,
            secure_bound_ratio: None,
        })
    }
}

/// Standardizes the training rows, splits them across `federation.clients`
/// and trains one shared hyper-parameter vector.
pub fn train_traffic(
    split: &TrafficSplitData,
    spec: &KernelSpec,
    federation: &FederationConfig,
    scheme: TrafficSplit,
) -> Result<TrafficModel> {
    if spec.input_dim()? != 1 {
        return invalid("traffic kernel must take a 1-D time input");
    }
    let (local, y_mean, y_scale) = local_traffic_data(split, federation.clients, scheme, federation.seed)?;
    let mut cfg = federation.clone();
    if cfg.init_center.is_none() {
        cfg.init_center = Some(traffic_init(spec));
    }
    let clients = local
        .iter()
        .enumerate()
        .map(|(i, d)| Ok(ClientState::new(i, GpObjective::new(spec.clone(), d.clone())?)))
        .collect::<Result<Vec<_>>>()?;
    let out = run_federation(&cfg, clients)?;
    let consensus_gap = out.clients.iter().map(|c| crate::fed::max_abs_diff(&c.theta, &out.z)).fold(0.0, f64::max);
    Ok(TrafficModel {
        model: GPModel::new(spec.clone(), HyperParamVector::from_log(out.z.clone())?)?,
        local,
        y_mean,
        y_scale,
        gradient_evals: out.gradient_evals(),
        converged: out.converged,
        secure_bound_ratio: out.audit.as_ref().map(|a| a.max_bound_ratio),
        history: out.state,
        consensus_gap,
    })
}

fn experts_at(preds: &[GaussianPrediction], i: usize) -> Result<Vec<ExpertPrediction>> {
    preds
        .iter()
        .enumerate()
        .map(|(k, p)| ExpertPrediction::new(k, p.mean[i], p.covariance[(i, i)].max(1e-300)))
        .collect()
}

/// Fused forecast in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficForecast {
    pub weights: FusionWeights,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Fits fusion weights on the validation window and forecasts the test
/// horizon by gPoE over the local experts.
pub fn forecast(model: &TrafficModel, split: &TrafficSplitData, fusion: &FusionConfig) -> Result<TrafficForecast> {
    let k = model.local.len();
    let weights = if split.valid_t.is_empty() || k == 1 {
        FusionWeights::uniform(k)
    } else {
        let preds = model.expert_predictions(&split.valid_t)?;
        let experts = (0..split.valid_t.len()).map(|i| experts_at(&preds, i)).collect::<Result<Vec<_>>>()?;
        let targets: Vec<f64> = split.valid_y.iter().map(|v| (v - model.y_mean) / model.y_scale).collect();
        optimize_fusion_weights(&experts, &targets, fusion)?
    };
    let preds = model.expert_predictions(&split.test_t)?;
    let mut mean = Vec::with_capacity(split.test_t.len());
    let mut variance = Vec::with_capacity(split.test_t.len());
    for i in 0..split.test_t.len() {
        let (m, v) = gpoe_fuse(&experts_at(&preds, i)?, &weights)?;
        mean.push(m * model.y_scale + model.y_mean);
        variance.push(v * model.y_scale * model.y_scale);
    }
    Ok(TrafficForecast { weights, mean, variance })
}
