//! `fedgp`: batch driver for federated GP experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 ingestion or I/O error,
//! 4 numerical failure (including a failed oracle self-test).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedgp::fed::Method;
use fedgp::gp::GPModel;
use fedgp::harness::{self, io, ExperimentConfig, Task};
use fedgp::Error;

#[derive(Parser, Debug)]
#[command(name = "fedgp", version, about = "Federated Gaussian-process experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Task to run when no configuration file is given.
    #[arg(long, global = true, value_enum)]
    task: Option<TaskArg>,
    /// Overrides the configured seed; required without --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the configured one, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Federated method; for `compare` and `oracle` restricts the method list.
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true, value_enum)]
    secure_agg: Option<Switch>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic data set of the task as CSV.
    GenData,
    /// Train one model with the configured method.
    Train,
    /// Predict with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Train every configured method on the same data and tabulate them.
    Compare,
    /// Quadratic-consensus self-test of every method.
    Oracle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Tracking,
    Traffic,
    QuadraticOracle,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Tracking => Task::Tracking,
            TaskArg::Traffic => Task::Traffic,
            TaskArg::QuadraticOracle => Task::QuadraticOracle,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Ingestion { .. } | Error::Io(_) => 3,
        Error::Round { source, .. } => exit_code(source),
        Error::Numerical { .. } | Error::Optimization(_) | Error::Aggregation(_) => 4,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&cli.config, cli.task, &cli.command) {
        (Some(path), _, _) => ExperimentConfig::load(path)?,
        (None, task, cmd) => {
            let task = match (task, cmd) {
                (Some(t), _) => t.into(),
                (None, Command::Oracle) => Task::QuadraticOracle,
                (None, _) => return Err(Error::Config("either --config or --task is required".into())),
            };
            let seed = cli.seed.ok_or_else(|| Error::Config("--seed is required without --config".into()))?;
            ExperimentConfig::for_task(task, seed)
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(m) = cli.method {
        cfg.federation.method = m;
        cfg.methods = vec![m];
    }
    if let Some(s) = cli.secure_agg {
        cfg.federation.secure_agg = matches!(s, Switch::On);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gen_data(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Error> {
    match cfg.task {
        Task::Tracking => {
            let (train, test) = harness::tracking_data(cfg)?;
            io::write_trajectories(&dir.join("train.csv"), &train, Some(&cfg.stamp()))?;
            io::write_trajectories(&dir.join("test.csv"), &test, Some(&cfg.stamp()))?;
            println!("wrote {} training and {} test trajectories to {}", train.len(), test.len(), dir.display());
        }
        Task::Traffic => {
            let series = harness::traffic_series(cfg)?;
            io::write_traffic(&dir.join("traffic.csv"), std::slice::from_ref(&series), Some(&cfg.stamp()))?;
            println!("wrote {} samples to {}", series.samples.len(), dir.join("traffic.csv").display());
        }
        Task::QuadraticOracle => return Err(Error::Config("the oracle task has no data to generate".into())),
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Error> {
    let method = cfg.federation.method;
    match cfg.task {
        Task::Tracking => {
            let (tr, te) = harness::tracking_data(cfg)?;
            let run = harness::run_tracking_method(cfg, method, &tr, &te)?;
            io::write_text(&dir.join("model.toml"), &harness::transition_models_to_toml(&run.models)?)?;
            io::write_json(&dir.join("metrics.json"), &run.metrics)?;
            if let (Some(hx), Some(hy)) = (&run.history_x, &run.history_y) {
                harness::write_history(&dir.join("history_x.csv"), hx, cfg)?;
                harness::write_history(&dir.join("history_y.csv"), hy, cfg)?;
            }
            let m = &run.metrics;
            println!(
                "{method}: nll {:.4} rmse {:.4} m, {} rounds, {} gradient evaluations, converged {}",
                m.final_nll, m.rmse, m.rounds, m.gradient_evals, m.converged
            );
        }
        Task::Traffic => {
            let report = harness::run_traffic_experiment(cfg, method)?;
            io::write_text(&dir.join("model.toml"), &report.model.to_toml()?)?;
            report.write(dir, cfg)?;
            let m = &report.metrics;
            println!(
                "{method}: nmse {:.4} (persistence {:.4}), nlpd {:.4}, {} rounds",
                m.nmse, m.persistence_nmse, m.nlpd, m.rounds
            );
        }
        Task::QuadraticOracle => return Err(Error::Config("use `oracle` for the quadratic task".into())),
    }
    Ok(())
}

fn predict(cfg: &ExperimentConfig, dir: &Path, model: &Path, score_only: bool) -> Result<(), Error> {
    let text = read_text(model)?;
    match cfg.task {
        Task::Tracking => {
            let models = harness::transition_models_from_toml(&text)?;
            let eval = harness::evaluate_tracking(cfg, &models)?;
            if score_only {
                io::write_json(&dir.join("eval.json"), &eval)?;
            } else {
                harness::write_tracking_predictions(&dir.join("predictions.csv"), cfg, &models)?;
            }
            println!("rmse {:.4} m over {} transitions, nll {:.4}", eval.rmse, eval.test_transitions, eval.final_nll);
        }
        Task::Traffic => {
            let report = harness::run_traffic_with_model(cfg, GPModel::from_toml(&text)?)?;
            if score_only {
                io::write_json(&dir.join("eval.json"), &report.metrics)?;
            } else {
                report.write(dir, cfg)?;
            }
            let m = &report.metrics;
            println!("nmse {:.4} (persistence {:.4}), nlpd {:.4}", m.nmse, m.persistence_nmse, m.nlpd);
        }
        Task::QuadraticOracle => return Err(Error::Config("the oracle task has no model".into())),
    }
    Ok(())
}

fn compare(cfg: &ExperimentConfig, dir: &Path) -> Result<bool, Error> {
    match cfg.task {
        Task::Tracking => {
            let report = harness::run_tracking_experiment(cfg, &cfg.methods)?;
            report.write(dir, cfg)?;
            println!("{:<12} {:>12} {:>8} {:>7} {:>10}", "method", "nll", "rmse", "rounds", "grad_evals");
            for r in &report.metrics.rows {
                println!("{:<12} {:>12.4} {:>8.4} {:>7} {:>10}", r.method, r.final_nll, r.rmse, r.rounds, r.gradient_evals);
            }
        }
        Task::Traffic => {
            let (cmp, reports) = harness::run_traffic_comparison(cfg, &cfg.methods)?;
            cmp.write(dir, cfg, &reports)?;
            println!("{:<10} {:>8} {:>12} {:>8} {:>7}", "method", "nmse", "persistence", "nlpd", "rounds");
            for r in &cmp.rows {
                println!("{:<10} {:>8.4} {:>12.4} {:>8.4} {:>7}", r.method, r.nmse, r.persistence_nmse, r.nlpd, r.rounds);
            }
        }
        Task::QuadraticOracle => return oracle(cfg, dir, &cfg.methods),
    }
    Ok(true)
}

fn oracle(cfg: &ExperimentConfig, dir: &Path, methods: &[Method]) -> Result<bool, Error> {
    let m = harness::run_quadratic_oracle(cfg, methods)?;
    m.write(dir, cfg)?;
    for r in &m.rows {
        println!(
            "{} {:<8} K={:<3} |z - mean(a)| = {:.2e} after {} rounds",
            if r.passed { "PASS" } else { "FAIL" },
            r.method,
            r.clients,
            r.error,
            r.rounds
        );
    }
    Ok(m.all_passed)
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let cfg = load_config(cli)?;
    let dir = out_dir(&cfg);
    log::info!("config {} seed {}", cfg.hash(), cfg.seed);
    match &cli.command {
        Command::GenData => gen_data(&cfg, &dir).map(|_| true),
        Command::Train => train(&cfg, &dir).map(|_| true),
        Command::Predict { model } => predict(&cfg, &dir, model, false).map(|_| true),
        Command::Eval { model } => predict(&cfg, &dir, model, true).map(|_| true),
        Command::Compare => compare(&cfg, &dir),
        Command::Oracle => {
            let methods = if cli.method.is_some() { cfg.methods.clone() } else { Method::ALL.to_vec() };
            oracle(&cfg, &dir, &methods)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDGP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: oracle self-test failed");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
