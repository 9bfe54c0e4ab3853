//! End-to-end runs of the `iqc-cert` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iqc-cert"))
        .arg("--workdir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

fn scalar_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "scalar.json", r#"{"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]]}"#);
    write(dir.path(), "l09.json", r#"{"lipschitz": 0.9}"#);
    write(dir.path(), "l11.json", r#"{"lipschitz": 1.1}"#);
    write(dir.path(), "pattern.json", r#"{"pattern": [["+"]], "eps": 0.1, "l": 1.0}"#);
    dir
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("JSON error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn scalar_certificate_inside_and_outside_the_small_gain_range() {
    let dir = scalar_dir();
    let out = run(dir.path(), &["certify", "--plant", "scalar.json", "--bounds", "l09.json", "--out", "cert.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cert.json")).unwrap()).unwrap();
    assert_eq!(cert["feasible"], true);
    let gamma = cert["gamma"].as_f64().unwrap();
    // Analytic value 1/(1 − 0.9) = 10 with a 5% bisection tolerance.
    assert!((10.0..=10.5 + 1e-9).contains(&gamma), "{gamma}");
    assert_eq!(cert["config_hash"].as_str().unwrap().len(), 64);

    let out = run(dir.path(), &["certify", "--plant", "scalar.json", "--bounds", "l11.json"]);
    assert_eq!(out.status.code(), Some(0));
    let cert: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["feasible"], false);
}

#[test]
fn certificates_are_reproducible() {
    let dir = scalar_dir();
    let args = ["certify", "--plant", "scalar.json", "--mode", "l2_only", "--level", "0.5"];
    let a = run(dir.path(), &args);
    let b = run(dir.path(), &args);
    assert_eq!(a.status.code(), Some(0));
    let (a, b): (Value, Value) = (serde_json::from_slice(&a.stdout).unwrap(), serde_json::from_slice(&b.stdout).unwrap());
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["gamma"], b["gamma"]);
}

#[test]
fn missing_file_is_a_validation_error() {
    let dir = scalar_dir();
    let out = run(dir.path(), &["certify", "--plant", "nope.json", "--bounds", "l09.json"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("nope.json"));
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = scalar_dir();
    write(dir.path(), "bad.json", r#"{"A": [[-1.0]], "B": [[1.0]], "D": 3}"#);
    let out = run(dir.path(), &["certify", "--plant", "bad.json", "--bounds", "l09.json"]);
    assert_eq!(out.status.code(), Some(2));
    write(dir.path(), "unstable.json", r#"{"A": [[1.0]], "B": [[1.0]]}"#);
    let out = run(dir.path(), &["certify", "--plant", "unstable.json", "--bounds", "l09.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["certify", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn empty_grid_is_rejected() {
    let dir = scalar_dir();
    for grid in ["", "1.0:0.1:0.5", "0.5,0.4"] {
        let out = run(dir.path(), &["sweep", "--plant", "scalar.json", "--mode", "l2_only", "--grid", grid]);
        assert_eq!(out.status.code(), Some(2), "grid '{grid}'");
    }
}

#[test]
fn sweep_then_report() {
    let dir = scalar_dir();
    let out = run(
        dir.path(),
        &["sweep", "--plant", "scalar.json", "--pattern", "pattern.json", "--grid", "0.2:0.2:1.2", "--out-dir", "sw"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sw = dir.path().join("sw");
    for mode in ["l2_only", "sparsity", "nonhomogeneous"] {
        let mut r = csv::Reader::from_path(sw.join(format!("sweep_{mode}.csv"))).unwrap();
        let feasible: Vec<bool> = r
            .records()
            .map(|rec| rec.unwrap().get(1).unwrap() == "true")
            .collect();
        assert_eq!(feasible.len(), 6);
        // Feasibility never returns once lost.
        let first_bad = feasible.iter().position(|f| !f).unwrap_or(feasible.len());
        assert!(feasible[first_bad..].iter().all(|f| !f), "{mode}: {feasible:?}");
        assert!(feasible[0]);
    }
    let bundle: Value = serde_json::from_str(&fs::read_to_string(sw.join("bundle.json")).unwrap()).unwrap();
    assert_eq!(bundle["command"], "sweep");

    let out = run(dir.path(), &["report", "--dir", "sw"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max_cert_l"));
    assert!(text.contains("ordering:"));
    assert!(sw.join("margins.csv").exists());
}

#[test]
fn incomplete_bundle_is_rejected() {
    let dir = scalar_dir();
    let out = run(dir.path(), &["report", "--dir", "missing"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(
        dir.path(),
        &["sweep", "--plant", "scalar.json", "--mode", "l2_only", "--grid", "0.5", "--out-dir", "sw"],
    );
    assert_eq!(out.status.code(), Some(0));
    fs::remove_file(dir.path().join("sw").join("sweep_l2_only.csv")).unwrap();
    let out = run(dir.path(), &["report", "--dir", "sw"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("incomplete bundle"));
}

#[test]
fn plant_file_modes_need_a_pattern() {
    let dir = scalar_dir();
    let out = run(dir.path(), &["sweep", "--plant", "scalar.json", "--mode", "sparsity", "--grid", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_simulate_on_the_power_preset() {
    let dir = scalar_dir();
    write(
        dir.path(),
        "train.json",
        r#"{"horizon": 1.0, "h": 0.005, "control_every": 4, "batch": 2, "fisher_samples": 64, "checkpoint_every": 2}"#,
    );
    let out = run(
        dir.path(),
        &[
            "train", "--preset", "power", "--mode", "ht", "--lcert", "0.1", "--iters", "4", "--seed", "1", "--config",
            "train.json", "--out-dir", "tr",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let tr = dir.path().join("tr");
    for f in ["curve.csv", "policy.json", "bundle.json", "checkpoints/policy_00002.json", "checkpoints/policy_00004.json"] {
        assert!(tr.join(f).exists(), "{f}");
    }
    let mut r = csv::Reader::from_path(tr.join("curve.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "lipschitz").unwrap();
    for rec in r.records() {
        let l: f64 = rec.unwrap().get(col).unwrap().parse().unwrap();
        assert!(l <= 0.1);
    }

    let out = run(
        dir.path(),
        &["simulate", "--preset", "power", "--controller", "tr/policy.json", "--T", "1", "--out", "sim.csv"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("sim.csv")).unwrap();
    assert_eq!(r.records().count(), 1001);
    assert!(dir.path().join("sim.bundle.json").exists());
}
