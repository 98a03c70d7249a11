use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn revpref(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revpref"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_writes_datasets_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = revpref(dir.path(), &["generate", "--preset", "paper", "--seed", "7", "--out-noisy", "d.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("d.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["config"]["seed"], 7);
    assert_eq!((v["T"].as_u64(), v["M"].as_u64(), v["N"].as_u64()), (Some(5), Some(3), Some(2)));
    let text = fs::read_to_string(dir.path().join("d.json")).unwrap();
    revpref::Dataset::from_json(&text).unwrap();
}

#[test]
fn generate_without_outputs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = revpref(dir.path(), &["generate", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn zero_noise_files_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let o = revpref(
        dir.path(),
        &["generate", "--preset", "paper", "--seed", "3", "--sigma", "0", "--out-clean", "c.json", "--out-noisy", "n.json"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(dir.path().join("c.json")).unwrap(), fs::read(dir.path().join("n.json")).unwrap());
}

#[test]
fn detect_reports_coordination() {
    let dir = tempfile::tempdir().unwrap();
    revpref(dir.path(), &["generate", "--seed", "2", "--out-clean", "c.json"]);
    let o = revpref(dir.path(), &["detect", "--data", "c.json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["coordinated"], true);

    let cycle = r#"{"T": 2, "M": 1, "N": 2, "probes": [[1, 0], [0, 1]], "signals": [[[1, 0], [0, 1]]], "noisy": true}"#;
    fs::write(dir.path().join("cycle.json"), cycle).unwrap();
    let o = revpref(dir.path(), &["detect", "--data", "cycle.json", "--report", "r.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["coordinated"], false);
    assert!((v["phi"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
    assert_eq!(read_json(&dir.path().join("r.json"))["schema_version"], 1);
}

#[test]
fn naive_estimate_on_clean_data_has_zero_proximity() {
    let dir = tempfile::tempdir().unwrap();
    revpref(dir.path(), &["generate", "--preset", "paper", "--seed", "5", "--out-clean", "c.json"]);
    let o = revpref(dir.path(), &["estimate", "--data", "c.json", "--mode", "naive", "--out", "e.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_json(&dir.path().join("e.json"))["phi"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn robust_estimate_trace_ends_below_delta() {
    let dir = tempfile::tempdir().unwrap();
    revpref(dir.path(), &["generate", "--preset", "paper", "--seed", "5", "--out-noisy", "n.json"]);
    let o = revpref(
        dir.path(),
        &["estimate", "--data", "n.json", "--mode", "robust", "--delta", "0.1", "--epsilon", "0.2", "--out", "e.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("e.trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,objective,cv"));
    let last = lines.last().unwrap();
    let cv: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(cv <= 0.1, "{last}");

    let o = revpref(dir.path(), &["evaluate", "--data", "n.json", "--estimate", "e.json", "--preset", "paper", "--grid", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["error"].as_f64().unwrap() >= 0.0);
}

#[test]
fn robust_estimate_rejects_zero_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    revpref(dir.path(), &["generate", "--seed", "5", "--out-noisy", "n.json"]);
    let o = revpref(dir.path(), &["estimate", "--data", "n.json", "--epsilon", "0", "--out", "e.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon must be positive"));
}

#[test]
fn iteration_cap_exits_three_and_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    revpref(dir.path(), &["generate", "--seed", "5", "--out-noisy", "n.json"]);
    let o = revpref(
        dir.path(),
        &["estimate", "--data", "n.json", "--max-iterations", "1", "--out", "e.json", "--trace", "t.csv"],
    );
    assert_eq!(code(&o), 3);
    assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap().lines().count(), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "[generate]\nseed = 9\nsigma = 0.0\n").unwrap();
    let o = revpref(dir.path(), &["--config", "cfg.toml", "generate", "--seed", "4", "--out-noisy", "n.json"]);
    assert_eq!(code(&o), 0);
    let v = read_json(&dir.path().join("n.json"));
    assert_eq!(v["config"]["seed"], 4);
    assert_eq!(v["config"]["sigma"], 0.0);

    fs::write(dir.path().join("bad.toml"), "[generate]\nsead = 9\n").unwrap();
    let o = revpref(dir.path(), &["--config", "bad.toml", "generate", "--out-noisy", "n.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_data_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = revpref(dir.path(), &["detect", "--data", "nope.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn montecarlo_single_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str, traces: &'static str| {
        vec!["montecarlo", "--runs", "1", "--seed", "7", "--grid", "4", "--out", out, "--trace-dir", traces]
    };
    let a = revpref(dir.path(), &args("a.json", "ta"));
    let b = revpref(dir.path(), &args("b.json", "tb"));
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let (ra, rb) = (read_json(&dir.path().join("a.json")), read_json(&dir.path().join("b.json")));
    assert_eq!(ra["runs"], rb["runs"]);
    assert_eq!(ra["records"], rb["records"]);
    assert_eq!(
        fs::read(dir.path().join("ta/run_0000.csv")).unwrap(),
        fs::read(dir.path().join("tb/run_0000.csv")).unwrap()
    );
}
