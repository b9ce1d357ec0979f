use std::path::Path;
use std::process::{Command, Output};

fn fedgp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedgp")).args(args).current_dir(dir).env("FEDGP_LOG", "error").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SMALL_TRACKING: &str = r#"
task = "tracking"
seed = 3
methods = ["pxadmm"]

[tracking]
test_trajectories = 3

[tracking.synthetic]
n_trajectories = 6
steps = 8
"#;

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&fedgp(&["train"], p)), 2);
    assert_eq!(code(&fedgp(&["--task", "tracking", "train"], p)), 2);
    assert_eq!(code(&fedgp(&["--config", "missing.toml", "train"], p)), 2);
    std::fs::write(p.join("bad.toml"), "task = \"tracking\"\nseed = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(code(&fedgp(&["--config", "bad.toml", "train"], p)), 2);
    std::fs::write(p.join("noseed.toml"), "task = \"tracking\"\n").unwrap();
    assert_eq!(code(&fedgp(&["--config", "noseed.toml", "train"], p)), 2);
}

#[test]
fn malformed_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("train.csv"), "traj_id,t,x,y\n0,0.0,1.0,1.0\n0,0.5,1.5,1.0\n0,0.5,2.0,1.0\n").unwrap();
    std::fs::write(p.join("cfg.toml"), "task = \"tracking\"\nseed = 1\n[tracking]\ntrain_csv = \"train.csv\"\n").unwrap();
    let out = fedgp(&["--config", "cfg.toml", "train"], p);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.csv:4:"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failing_oracle_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("o.toml"), "task = \"quadratic_oracle\"\nseed = 1\n[oracle]\nmax_rounds = 2\n").unwrap();
    let out = fedgp(&["--config", "o.toml", "--out", "o", "oracle"], p);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let out = fedgp(&["--seed", "1", "--out", "o2", "oracle"], p);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("o2/oracle.csv").exists());
}

#[test]
fn train_eval_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("t.toml"), SMALL_TRACKING).unwrap();
    let out = fedgp(&["--config", "t.toml", "--out", "run", "--method", "pxadmm", "train"], p);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.toml", "metrics.json", "history_x.csv", "history_y.csv"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(p.join("run/metrics.json")).unwrap();
    assert!(metrics.contains("\"rmse\""));

    assert_eq!(code(&fedgp(&["--config", "t.toml", "--out", "run", "eval", "--model", "run/model.toml"], p)), 0);
    let eval = std::fs::read_to_string(p.join("run/eval.json")).unwrap();
    assert!(eval.contains("config_hash") && eval.contains("\"seed\": 3"), "{eval}");

    assert_eq!(code(&fedgp(&["--config", "t.toml", "--out", "run", "predict", "--model", "run/model.toml"], p)), 0);
    let preds = std::fs::read_to_string(p.join("run/predictions.csv")).unwrap();
    let header = preds.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("trajectory,t,next_x,next_y"), "{header}");

    std::fs::write(p.join("broken.toml"), "not a model").unwrap();
    assert_eq!(code(&fedgp(&["--config", "t.toml", "eval", "--model", "broken.toml"], p)), 2);
}

#[test]
fn gen_data_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("t.toml"), SMALL_TRACKING).unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&fedgp(&["--config", "t.toml", "--out", out, "gen-data"], p)), 0);
    }
    assert_eq!(std::fs::read(p.join("a/train.csv")).unwrap(), std::fs::read(p.join("b/train.csv")).unwrap());
    assert_eq!(code(&fedgp(&["--config", "t.toml", "--seed", "4", "--out", "c", "gen-data"], p)), 0);
    assert_ne!(std::fs::read(p.join("a/train.csv")).unwrap(), std::fs::read(p.join("c/train.csv")).unwrap());
}
