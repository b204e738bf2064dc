use serde_json::Value;
use std::process::Command;

fn dpre(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dpre")).args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = dpre(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

#[test]
fn annuli_threshold_and_phi_bound() {
    let a = json(&["annuli", "--m", "2", "--trunc", "10"]);
    assert_eq!(a["q_seq"], serde_json::json!([1, 3, 7]));
    assert_eq!(a["q_star"], 4);
    let t = json(&["threshold", "--theta", "1", "--weakened"]);
    assert_eq!(t["alpha"], 0.6);
    let s = json(&["threshold", "--theta", "0.4", "--weakened"]);
    assert_eq!(s["superdiffusive"], false);
    let p = json(&["phi-bound", "--m", "2", "--q0", "0", "--kappa", "1"]);
    assert_eq!(p, 0.5);
}

#[test]
fn cov_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov.json");
    let c = json(&["cov", "--t", "1", "--trunc", "2", "--out", out.to_str().unwrap()]);
    assert!((c["lags"][0].as_f64().unwrap() - 7.0 / 9.0).abs() < 1e-15);
    assert!(out.exists());
}

#[test]
fn simulate_populates_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let s = json(&["simulate", "--t", "0.5", "--dt", "0.05", "--dx", "0.1", "--half-width", "2", "--cache-dir", cache.to_str().unwrap()]);
    assert_eq!(s["rows"], 10);
    assert!(std::path::Path::new(s["path"].as_str().unwrap()).exists());
}

#[test]
fn run_is_reproducible_from_config_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "kernel = \"polynomial4\"\nt_list = [1.0, 2.0, 3.0, 4.0]\ndt = 0.05\ndx = 0.1\nn_paths = 100\nn_fields = 3\nn_eta = 100\nn_bracket_paths = 3\n",
    )
    .unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for d in [&a, &b] {
        let out = dpre(&["run", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = dpre(&["run", "--manifest", a.join("manifest.json").to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read(a.join("results.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.join("results.csv")).unwrap());
    assert_eq!(csv, std::fs::read(c.join("results.csv")).unwrap());
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "beta = 1.0\n").unwrap();
    let out = dpre(&["exponent", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing kernel name"));
}
