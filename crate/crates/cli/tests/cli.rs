use std::path::Path;
use std::process::{Command, Output};

use dnls_kam::HamiltonianPoly;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnls-kam")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["oracle", "--cases", "many"]).status.code(), Some(2));
    assert_eq!(run(&["measure", "--zone", "1,2"]).status.code(), Some(2));
    assert_eq!(run(&["oracle", "--n", "0"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"jmx": 3}"#).unwrap();
    assert_eq!(run(&["build", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"tolerances": {"residual": -1}}"#).unwrap();
    assert_eq!(run(&["build", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn kam_run_without_steps_reports_initial_diagnostics_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = ["a.json", "b.json"].iter().map(|n| dir.path().join(n)).collect();
    for p in &paths {
        let out = run(&["kam-run", "--steps", "0", "--jmax", "4", "--out", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(&paths[0]).unwrap();
    assert_eq!(a, std::fs::read(&paths[1]).unwrap());
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["steps"].as_array().unwrap().len(), 0);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    let eps0 = v["initial"]["eps0"].as_f64().unwrap();
    assert!((eps0 / 1e-3 - 1.0).abs() < 0.05, "{eps0}");
    assert_eq!(v["initial"]["conservation"]["momentum"], Value::Bool(true));
}

#[test]
fn oracle_campaign_matches() {
    let out = run(&["oracle", "--n", "1", "--K", "8", "--cases", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["summary"]["max_deviation"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["summary"]["solvers"].as_array().unwrap().len(), 3);
}

#[test]
fn build_round_trips() {
    let out = run(&["build", "--jmax", "3", "--quartic"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let h: HamiltonianPoly = serde_json::from_value(v["hamiltonian"].clone()).unwrap();
    assert_eq!(h.jmax(), 3);
    assert!(h.num_terms() > 0);
    let again: HamiltonianPoly = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
    assert_eq!(again, h);
}

#[test]
fn verify_fae_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fae.csv");
    let out = run(&["verify-fae", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(Path::new(&path)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("m,n,kind,check,bound,measured,margin,pass"));
    assert!(lines.all(|l| l.ends_with(",true")));
}

#[test]
fn measure_reports_a_verdict() {
    // anti-diagonal zone over the stage-0 tangent set
    let out = run(&["measure", "--zone", "1,-1,-2,2", "--samples", "20000", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    for key in ["estimate", "ci", "envelope", "verdict"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    // far from resonance: certified empty
    let out = run(&["measure", "--zone", "1,0,7,2", "--samples", "2000"]);
    assert_eq!(json(&out)["verdict"], "certified-empty");
}

#[test]
fn solve_agrees_with_oracle() {
    for kind in ["shifted", "large-variable", "liu-yuan"] {
        let out = run(&["solve", "--kind", kind, "--n", "2", "--K", "5", "--lambda", "-0.37"]);
        assert_eq!(out.status.code(), Some(0), "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(json(&out)["oracle_deviation"].as_f64().unwrap() < 1e-8);
    }
}
