use fedgp::fed::{FederationConfig, Method};
use fedgp::gp::posterior;
use fedgp::harness::{run_tracking_experiment, ExperimentConfig, Task};
use fedgp::optim::GradientDescentConfig;
use fedgp::tracking::{
    build_transition_dataset, evaluate_rmse, generate_synthetic_trajectories, predict_next_state, train_transition_centralized,
    train_transition_federated, StateSample, SyntheticTrajectoryConfig, Trajectory,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn default_fixture_row_count() {
    let trajs = generate_synthetic_trajectories(&SyntheticTrajectoryConfig::default()).unwrap();
    assert_eq!(trajs.len(), 45);
    let mut counted = 0;
    for t in &trajs {
        for pair in t.samples().windows(2) {
            assert!(pair[1].t > pair[0].t);
            counted += 1;
        }
    }
    let data = build_transition_dataset(&trajs).unwrap();
    assert_eq!(counted, 45 * 169);
    assert_eq!(data.len(), counted);
    assert_eq!(data.row_trajectory.len(), counted);
}

#[test]
fn synthetic_generator_fixture() {
    let cfg = SyntheticTrajectoryConfig { n_trajectories: 3, steps: 6, seed: 17, ..Default::default() };
    let trajs = generate_synthetic_trajectories(&cfg).unwrap();
    let got: Vec<(f64, f64)> = trajs.iter().map(|t| (t.samples()[5].x, t.samples()[5].y)).collect();
    for (g, e) in got.iter().zip(GENERATOR_FIXTURE) {
        assert!((g.0 - e.0).abs() < 1e-12 && (g.1 - e.1).abs() < 1e-12, "{g:?} vs {e:?}");
    }
    assert_eq!(trajs.iter().map(|t| t.owner).collect::<Vec<_>>(), vec![0, 1, 2]);
}

// Final positions recorded from a reference run with seed 17.
const GENERATOR_FIXTURE: [(f64, f64); 3] =
    [(9.712964368475163, 11.595803946877279), (10.458791769362564, 7.106286373700406), (4.5486747724871766, 14.729170569188948)];

/// Constant velocity along +x with Gaussian positional noise `sigma`.
fn linear_motion(n: usize, steps: usize, sigma: f64, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|id| {
            let (mut x, mut y) = (1.0 + (id % 4) as f64, 2.0 + 3.0 * (id % 3) as f64);
            let samples = (0..steps)
                .map(|i| {
                    if i > 0 {
                        x += 0.6 + noise.sample(&mut rng);
                        y += noise.sample(&mut rng);
                    }
                    StateSample { t: 0.5 * i as f64, x, y }
                })
                .collect();
            Trajectory::new(id, 0, samples).unwrap()
        })
        .collect()
}

#[test]
fn linear_motion_reaches_noise_floor() {
    let sigma = 0.05;
    let train = linear_motion(12, 15, sigma, 1);
    let test = linear_motion(6, 15, sigma, 2);
    let models = train_transition_centralized(&train, &GradientDescentConfig::default()).unwrap();
    let rmse = evaluate_rmse(&models, &build_transition_dataset(&train).unwrap(), &test).unwrap();
    let floor = std::f64::consts::SQRT_2 * sigma;
    assert!(rmse < 1.5 * floor, "rmse {rmse}, floor {floor}");
}

#[test]
fn per_dimension_posteriors_are_independent() {
    let cfg = SyntheticTrajectoryConfig { n_trajectories: 4, steps: 12, seed: 4, ..Default::default() };
    let trajs = generate_synthetic_trajectories(&cfg).unwrap();
    let models = train_transition_centralized(&trajs, &GradientDescentConfig { max_iters: 20, ..Default::default() }).unwrap();
    let data = build_transition_dataset(&trajs).unwrap();
    let state = [7.3, 4.1];
    let (mean, cov) = predict_next_state(&models, &data, state).unwrap();
    let q = DMatrix::from_row_slice(1, 2, &state);
    let px = posterior(&models.model_x, &data.x, &q).unwrap();
    let py = posterior(&models.model_y, &data.y, &q).unwrap();
    assert_eq!(mean[0], px.mean[0]);
    assert_eq!(mean[1], py.mean[0]);
    assert_eq!(cov[(0, 0)], px.covariance[(0, 0)]);
    assert_eq!(cov[(1, 1)], py.covariance[(0, 0)]);
    assert_eq!(cov[(0, 1)], 0.0);
    assert_eq!(cov[(1, 0)], 0.0);
}

#[test]
fn single_client_fedavg_reproduces_centralized_fit() {
    let cfg = SyntheticTrajectoryConfig { n_trajectories: 3, steps: 10, clients: 1, seed: 9, ..Default::default() };
    let trajs = generate_synthetic_trajectories(&cfg).unwrap();
    let lr = 1e-4;
    let rounds = 15;
    let fed = FederationConfig {
        method: Method::Fedavg,
        clients: 1,
        learning_rate: lr,
        init_spread: 0.0,
        tolerance: 1e-12,
        max_rounds: rounds,
        ..Default::default()
    };
    let federated = train_transition_federated(&trajs, &fed).unwrap();
    let central = train_transition_centralized(
        &trajs,
        &GradientDescentConfig { initial_step: lr, tolerance: 1e-12, max_iters: rounds, ..Default::default() },
    )
    .unwrap();
    assert_eq!(federated.history_x.round, rounds);
    assert_eq!(federated.models, central);
}

#[test]
fn pxadmm_rmse_close_to_centralized() {
    let mut cfg = ExperimentConfig::for_task(Task::Tracking, 7);
    cfg.tracking.synthetic.n_trajectories = 45;
    let report = run_tracking_experiment(&cfg, &[Method::Pxadmm]).unwrap();
    let rmse = |name: &str| report.metrics.rows.iter().find(|r| r.method == name).unwrap().rmse;
    let (rp, rc) = (rmse("pxadmm"), rmse("centralized"));
    assert!((rp - rc).abs() / rc < 0.05, "pxADMM {rp} vs centralized {rc}");
}
