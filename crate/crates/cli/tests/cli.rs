use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn obsvkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obsvkit"))
        .args(args)
        .env_remove("OBSVKIT_SEED")
        .output()
        .expect("spawn obsvkit")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run_to(dir: &Path, name: &str, args: &[&str]) -> (i32, Value) {
    let out = dir.join(name);
    let mut all = args.to_vec();
    all.extend(["--out", out.to_str().unwrap()]);
    let o = obsvkit(&all);
    (o.status.code().unwrap(), report(&out))
}

#[test]
fn camera_analysis_passes_with_four_null_directions() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = run_to(dir.path(), "r.json", &["analyze", "--system", "vins", "--features", "2", "--trials", "8", "--seed", "42"]);
    assert_eq!(code, 0);
    assert_eq!(r["pass"], true);
    assert_eq!(r["config"]["seed"], 42);
    let trials = r["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 8);
    assert!(trials.iter().all(|t| t["null_dimension"] == 4));
    assert_eq!(trials[1]["seed"], 43);
    assert_eq!(r["summaries"]["null_dim"]["passed"], true);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1, "temporary file left behind");
}

#[test]
fn lidar_analysis_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = run_to(dir.path(), "r.json", &["analyze", "--system", "lins", "--trials", "5", "--seed", "7"]);
    assert_eq!(code, 0);
    assert_eq!(r["config"]["features"], 1);
    assert!(r["trials"].as_array().unwrap().iter().all(|t| t["null_dimension"] == 4));
}

#[test]
fn collinear_runs_are_informational() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = run_to(
        dir.path(),
        "r.json",
        &["analyze", "--system", "vins", "--features", "2", "--degeneracy", "collinear_features", "--trials", "4"],
    );
    assert_eq!(code, 0);
    assert_eq!(r["informational"], true);
    let t = &r["trials"][0];
    assert_eq!(t["hypothesis_violation"], true);
    assert_eq!(t["theorem_flags"]["null_dim"]["status"], "hypothesis_violation");
    assert!(r["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("two-feature hypothesis")));
}

#[test]
fn identical_invocations_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["analyze", "--system", "vins", "--trials", "4", "--seed", "5"];
    let (_, mut a) = run_to(dir.path(), "a.json", &args);
    let (_, mut b) = run_to(dir.path(), "b.json", &args);
    a.as_object_mut().unwrap().remove("duration_seconds");
    b.as_object_mut().unwrap().remove("duration_seconds");
    assert_eq!(a, b);
}

#[test]
fn seed_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let status = Command::new(env!("CARGO_BIN_EXE_obsvkit"))
        .args(["verify", "identities", "--trials", "3", "--out", out.to_str().unwrap()])
        .env("OBSVKIT_SEED", "1234")
        .status()
        .unwrap();
    assert!(status.success());
    let r = report(&out);
    assert_eq!(r["config"]["seed"], 1234);
    assert_eq!(r["trials"][2]["seed"], 1236);
}

#[test]
fn invalid_configuration_exits_2() {
    for args in [
        &["analyze", "--system", "vins", "--features", "1"][..],
        &["analyze", "--system", "vins", "--tol-overrides", "bogus=1"],
        &["analyze", "--system", "vins", "--tol-overrides", "check_tol=-1"],
        &["analyze", "--system", "radar"],
        &["verify", "flow", "--dt", "0"],
        &["verify", "brackets", "--trials", "0"],
    ] {
        let o = obsvkit(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn failing_checks_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = run_to(
        dir.path(),
        "r.json",
        &["analyze", "--system", "lins", "--trials", "2", "--tol-overrides", "check_tol=1e-300"],
    );
    assert_eq!(code, 1);
    assert_eq!(r["pass"], false);
    assert_eq!(r["config"]["tolerances"]["check_tol"], 1e-300);
}

#[test]
fn verify_batteries_pass() {
    let dir = tempfile::tempdir().unwrap();
    for (name, args) in [
        ("brackets", &["verify", "brackets", "--trials", "5", "--seed", "3"][..]),
        ("identities", &["verify", "identities", "--trials", "50"]),
        ("gradients", &["verify", "gradients", "--trials", "2"]),
        ("flow", &["verify", "flow", "--duration", "0.3", "--dt", "1e-2", "--trials", "2", "--seed", "9"]),
    ] {
        let (code, r) = run_to(dir.path(), &format!("{name}.json"), args);
        assert_eq!(code, 0, "{name}");
        assert_eq!(r["pass"], true, "{name}");
        assert!(r["summaries"].as_object().unwrap().values().all(|s| s["max"].is_f64()), "{name}");
    }
}

#[test]
fn flow_report_echoes_step_and_duration() {
    let dir = tempfile::tempdir().unwrap();
    let (_, r) = run_to(dir.path(), "r.json", &["verify", "flow", "--duration", "0.2", "--dt", "0.02", "--trials", "1"]);
    assert_eq!(r["config"]["duration"], 0.2);
    assert_eq!(r["config"]["dt"], 0.02);
    assert!(r["trials"][0]["residuals"]["flow_residual"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn stdout_has_a_verdict() {
    let o = obsvkit(&["verify", "brackets", "--trials", "2"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("PASS"), "{text}");
}
