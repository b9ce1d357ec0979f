use fedgp::fed::Method;
use fedgp::fusion::FusionConfig;
use fedgp::gp::{posterior, Dataset, GPModel};
use fedgp::harness::io::{read_trajectories, read_traffic, write_trajectories, write_traffic};
use fedgp::harness::traffic::{
    default_traffic_kernel, forecast, generate_traffic_series, split_series, traffic_init, TrafficConfig, TrafficModel,
    TrafficSeries, TrafficSplit,
};
use fedgp::harness::{run_traffic_experiment, ExperimentConfig, Task};
use fedgp::kernels::HyperParamVector;
use fedgp::tracking::{generate_synthetic_trajectories, SyntheticTrajectoryConfig};
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

#[test]
fn default_series_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traffic.csv");
    let series = generate_traffic_series(&TrafficConfig::default()).unwrap();
    write_traffic(&path, &[series], None).unwrap();
    let digest = hex::encode(Sha256::digest(std::fs::read(&path).unwrap()));
    assert_eq!(digest, DEFAULT_SERIES_SHA256);
}

// SHA-256 of the default series CSV, recorded from a reference run.
const DEFAULT_SERIES_SHA256: &str = "40a2031575cc1304b20356b8c31a42e1279af4e3d2b63b346ffc711427cb3e22";

#[test]
fn csv_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let series = TrafficSeries {
        station_id: 3,
        samples: vec![(0.0, 1.0 / 3.0), (0.1, 99.99999999999999), (2.0 / 3.0, 5e-324), (1e6, std::f64::consts::PI)],
    };
    let p = dir.path().join("s.csv");
    write_traffic(&p, std::slice::from_ref(&series), Some("config_hash=x seed=1")).unwrap();
    assert_eq!(read_traffic(&p).unwrap(), vec![series]);

    let trajs = generate_synthetic_trajectories(&SyntheticTrajectoryConfig { n_trajectories: 4, steps: 9, seed: 3, ..Default::default() })
        .unwrap();
    let p = dir.path().join("t.csv");
    write_trajectories(&p, &trajs, None).unwrap();
    let back = read_trajectories(&p, 3).unwrap();
    assert_eq!(back.len(), trajs.len());
    for (a, b) in back.iter().zip(&trajs) {
        assert_eq!(a.samples(), b.samples());
    }
}

#[test]
fn noise_free_daily_cycle_is_forecast() {
    let mut cfg = ExperimentConfig::for_task(Task::Traffic, 1);
    cfg.traffic.synthetic = TrafficConfig { weekly_amp: 0.0, weekend_contrast: 0.0, noise: 0.0, ..Default::default() };
    let report = run_traffic_experiment(&cfg, Method::Cadmm).unwrap();
    assert!(report.metrics.nmse < 1e-3, "nmse {}", report.metrics.nmse);
}

#[test]
fn single_expert_forecast_is_the_pooled_posterior() {
    let series = generate_traffic_series(&TrafficConfig { days: 8, seed: 4, ..Default::default() }).unwrap();
    let split = split_series(&series, 24.0, 24.0).unwrap();
    let spec = default_traffic_kernel();
    let model = GPModel::new(spec.clone(), HyperParamVector::from_log(traffic_init(&spec)).unwrap()).unwrap();
    let tm = TrafficModel::from_trained(model.clone(), &split, 1, TrafficSplit::Contiguous, 0).unwrap();
    let fused = forecast(&tm, &split, &FusionConfig::default()).unwrap();

    let n = split.train_y.len() as f64;
    let mean = split.train_y.iter().sum::<f64>() / n;
    let scale = (split.train_y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let y = DVector::from_iterator(split.train_y.len(), split.train_y.iter().map(|v| (v - mean) / scale));
    let pooled = Dataset::new(DMatrix::from_column_slice(split.train_t.len(), 1, &split.train_t), y).unwrap();
    let direct = posterior(&model, &pooled, &DMatrix::from_column_slice(split.test_t.len(), 1, &split.test_t)).unwrap();
    for i in 0..split.test_t.len() {
        let m = direct.mean[i] * scale + mean;
        let v = direct.covariance[(i, i)] * scale * scale;
        assert!((fused.mean[i] - m).abs() <= 1e-12 * m.abs(), "{} vs {m}", fused.mean[i]);
        assert!((fused.variance[i] - v).abs() <= 1e-12 * v, "{} vs {v}", fused.variance[i]);
    }
}
