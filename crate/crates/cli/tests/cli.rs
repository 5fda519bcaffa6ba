use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "seed": 11,
  "scenario": {"kind": "radio_square", "side": 1.0, "basis": 16},
  "methods": ["PF", "PS", "EKF", "EKS"],
  "runs": 2,
  "particles": 10,
  "iterations": 2,
  "grid": 5
}"#;

fn rbslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbslam"))
        .args(args)
        .env_remove("RBSLAM_WORKERS")
        .output()
        .expect("binary runs")
}

fn write_manifest(dir: &Path, text: &str) -> String {
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_seed_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"scenario": {"kind": "radio_square"}, "methods": ["PF"]}"#);
    let out = dir.path().join("out");
    let o = rbslam(&["run", "--manifest", &m, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        r#"{"seed": 1, "scenario": {"kind": "radio_square"}, "methods": ["PF"], "iters": 3}"#,
    );
    let o = rbslam(&["run", "--manifest", &m, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("iters"), "{}", stderr(&o));
}

#[test]
fn run_writes_artifacts_and_evaluate_recomputes_them() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = rbslam(&["run", "--manifest", &m, "--out", out.to_str().unwrap(), "--workers", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "config.json",
        "results.csv",
        "box_stats.csv",
        "outputs.json",
        "run.log",
        "traj_truth_level0.csv",
        "traj_PF_level0.csv",
        "traj_PS_level0.csv",
        "traj_EKS_level0.csv",
        "ancestors_level0.csv",
        "map_truth_level0_run0.csv",
        "map_PS_level0_run0.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let mut rdr = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let rows = rdr.records().count();
    assert_eq!(rows, 2 * 4);

    let outputs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("outputs.json")).unwrap()).unwrap();
    assert_eq!(outputs["seed"], 11);

    let again = dir.path().join("again.csv");
    let o = rbslam(&[
        "evaluate",
        "--results",
        out.join("results.csv").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(out.join("box_stats.csv")).unwrap(),
        std::fs::read_to_string(&again).unwrap()
    );
}

#[test]
fn simulate_writes_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), SMALL);
    let out = dir.path().join("sim");
    let o = rbslam(&["simulate", "--manifest", &m, "--out", out.to_str().unwrap(), "--run", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["truth.csv", "odometry.csv", "measurements.csv", "theta.csv", "simulate.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn verify_passes_and_catches_a_wrong_spectral_density() {
    let o = rbslam(&["verify"]);
    assert!(o.status.success(), "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let o = rbslam(&["verify", "--spectral-scale", "1.1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
