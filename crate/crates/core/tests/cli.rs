use std::path::Path;
use std::process::{Command, Output};

const SMALL_RUN: &str = r#"{
  "scenario": "diagonal",
  "D": 2,
  "K": [2, 5],
  "N": 3,
  "estimator": ["iwae", "aisle_kl"],
  "optimizer": "adam",
  "iterations": 20,
  "replicates": 3,
  "master_seed": 17
}"#;

fn aisle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aisle")).args(args).output().expect("binary runs")
}

fn run_to(dir: &Path, config: &Path, name: &str, extra: &[&str]) -> (Output, Vec<u8>) {
    let out = dir.join(name);
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = aisle(&args);
    let bytes = std::fs::read(&out).unwrap_or_default();
    (o, bytes)
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = aisle(&["run", "--config", dir.path().join("absent.json").to_str().unwrap(), "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, SMALL_RUN.replace("\"N\": 3", "\"N\": 3, \"particles\": 4")).unwrap();
    let (o, _) = run_to(dir.path(), &cfg, "out.csv", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("particles"));
}

#[test]
fn invalid_value_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, SMALL_RUN.replace("\"optimizer\": \"adam\"", "\"optimizer\": \"adam\", \"eta\": 1.5")).unwrap();
    let (o, _) = run_to(dir.path(), &cfg, "out.csv", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta"));
}

#[test]
fn run_is_reproducible_from_config_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, SMALL_RUN).unwrap();

    let (o, first) = run_to(dir.path(), &cfg, "a.csv", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario,D,K,N,estimator,optimizer,eta,replicates,iteration,median_error"));
    // 2 K values x 2 estimators x 21 iterations
    assert_eq!(lines.count(), 84);

    let (_, again) = run_to(dir.path(), &cfg, "b.csv", &["--threads", "1"]);
    assert_eq!(first, again);

    let sidecar = dir.path().join("a.json");
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(&sidecar).unwrap()).unwrap();
    assert_eq!(meta["master_seed"], 17);
    let (o, from_sidecar) = run_to(dir.path(), &sidecar, "c.csv", &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first, from_sidecar);

    let (_, reseeded) = run_to(dir.path(), &cfg, "d.csv", &["--seed", "18"]);
    assert_ne!(first, reseeded);
}

#[test]
fn snr_table_has_one_row_per_estimator_and_k() {
    let o = aisle(&["snr", "--estimators", "iwae,theta", "--K", "1,2,4,8", "--M", "200", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("estimator,K,median_snr,slope"));
    assert_eq!(lines.count(), 8);
}

#[test]
fn unknown_estimator_is_a_config_error() {
    let o = aisle(&["snr", "--estimators", "vimco", "--M", "100"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_subcommands_pass() {
    let o = aisle(&["gradcheck", "--D", "1,2", "--points", "5", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = aisle(&["identities", "--seed", "7", "--M", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn bad_flag_exits_with_usage_code() {
    assert_eq!(aisle(&["run", "--frobnicate"]).status.code(), Some(2));
}
