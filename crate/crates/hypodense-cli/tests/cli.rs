//! End-to-end runs of the `hypodense` binary.

use std::path::Path;
use std::process::{Command, Output};

fn hypodense(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypodense"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn indices_prints_the_listing() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypodense(dir.path(), &["indices", "--hurst", "2/5", "--set", "L1", "--cutoff", "4"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0,1,2,2.5,3,3.5,4");
    assert_eq!(std::fs::read_to_string(dir.path().join("indices.csv")).unwrap().trim(), "0,1,2,2.5,3,3.5,4");
}

#[test]
fn minimize_reports_the_heisenberg_energy() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypodense(dir.path(), &["minimize", "--model", "heisenberg", "--target", "1,0.5,0", "--hurst", "1/2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let energy = json(&dir.path().join("minimizer.json"))["energy"].as_f64().unwrap();
    assert!((energy - 0.625).abs() < 1e-4, "{energy}");
}

#[test]
fn manifest_reruns_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypodense(dir.path(), &["lift", "--hurst", "2/5", "--seed", "4", "--workers", "1"]);
    assert!(o.status.success());
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "lift");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["workers"], 1);
    assert!(m["version"].is_string() && m["wall_time_seconds"].is_number());
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"signature.csv") && outputs.contains(&"config.txt"));

    let again = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hypodense"))
        .args(["lift", "--config"])
        .arg(dir.path().join("config.txt"))
        .arg("--out")
        .arg(again.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    for f in ["signature.csv", "lift.json"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypodense(dir.path(), &["density", "--bogus_key", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
    let o = hypodense(dir.path(), &["lift", "--hurst", "0.7"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failures_name_the_module() {
    let dir = tempfile::tempdir().unwrap();
    // dy = y³ dγ from y = 1 explodes once γ reaches 1/2.
    let fields = dir.path().join("cubic.txt");
    std::fs::write(&fields, "dim = 1\nnoise = 1\nV1[1] = y1^3\n").unwrap();
    let o = hypodense(
        dir.path(),
        &["skeleton", "--model", "file", "--fields", fields.to_str().unwrap(), "--start", "1", "--direction", "40"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rde"));
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["covariance", "--samples", "600", "--epsilons", "0.25,0.125", "--seed", "3"];
    for (dir, w) in [(&a, "1"), (&b, "3")] {
        let mut full = args.to_vec();
        full.extend(["--workers", w]);
        let o = hypodense(dir.path(), &full);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["q_at_min.json", "tail.json", "ratios.json", "tail.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn density_matches_the_printed_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypodense(
        dir.path(),
        &["density", "--model", "lognormal", "--t", "0.5", "--method", "shifted", "--samples", "100000", "--seed", "7"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("closed form"));
    let mut rows = csv::Reader::from_path(dir.path().join("density.csv")).unwrap();
    let row = rows.records().next().unwrap().unwrap();
    let (estimate, oracle): (f64, f64) = (row[1].parse().unwrap(), row[5].parse().unwrap());
    assert!((estimate / oracle - 1.0).abs() < 0.05, "{estimate} vs {oracle}");
}

#[test]
fn verify_with_injected_fault_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypodense(dir.path(), &["verify", "--suite", "fast", "--inject-fault", "chen", "--workers", "1"]);
    assert_eq!(o.status.code(), Some(4));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("criterion  2 FAIL")), "{text}");
    assert_eq!(text.lines().filter(|l| l.contains(" FAIL ")).count(), 1, "{text}");
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["outcomes"].as_array().unwrap().len(), 11);
}
