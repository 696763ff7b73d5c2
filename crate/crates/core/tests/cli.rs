use std::process::{Command, Output};

use nodal_tangent::ensemble::{sample_harmonic, trial_seed};
use nodal_tangent::geometry::FieldSpec;
use nodal_tangent::nodal::count;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nodal-tangent")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

const MC: [&str; 9] = ["mc", "--l", "6", "--field", "rotation", "--trials", "10", "--base-seed", "42"];

#[test]
fn mc_is_byte_identical_across_runs_and_workers() {
    let a = run(&[&MC[..], &["--workers", "1"]].concat());
    let b = run(&[&MC[..], &["--workers", "3"]].concat());
    let c = run(&MC);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let v = json(&a);
    assert!(v["runtime_s"].is_null());
    assert_eq!(v["config"]["base_seed"], 42);
    let stderr = String::from_utf8_lossy(&a.stderr);
    assert!(stderr.contains("base_seed=42") && stderr.contains(&trial_seed(42, 0).to_string()));
}

#[test]
fn mc_trials_match_direct_counts() {
    let v = json(&run(&MC));
    let trials = v["per_trial"].as_array().unwrap();
    assert_eq!(trials.len(), 10);
    let mut total = 0;
    for (i, t) in trials.iter().enumerate() {
        let seed = trial_seed(42, i as u64);
        assert_eq!(t["index"], i);
        assert_eq!(t["seed"], seed);
        let c = count(&sample_harmonic(6, seed).unwrap(), &FieldSpec::rotation()).unwrap();
        assert_eq!(t["count"], c);
        total += c;
    }
    assert!((v["mean"].as_f64().unwrap() - total as f64 / 10.0).abs() < 1e-12);
    let lead = v["leading_term"].as_f64().unwrap();
    assert!((lead - 2f64.sqrt() / (4.0 * std::f64::consts::PI.powi(2)) * 36.0).abs() < 1e-14);
}

#[test]
fn output_file_timing_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = run(&[&MC[..], &["--output", path.to_str().unwrap()]].concat());
    assert!(out.status.success() && out.stdout.is_empty());
    assert_eq!(std::fs::read(&path).unwrap(), run(&MC).stdout);

    let timed = json(&run(&[&MC[..], &["--timing"]].concat()));
    assert!(timed["runtime_s"].as_f64().unwrap() > 0.0);

    let csv = run(&[&MC[..], &["--format", "csv"]].concat());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("quantity,index,seed,value\ncount,0,"));
    assert!(text.contains("\nmean,,,") && text.contains("\nz_score,,,"));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# smaller run\nl = 4\ntrials = 3\nfield = tilted\n").unwrap();
    let v = json(&run(&[&MC[..], &["--config", cfg.to_str().unwrap()]].concat()));
    assert_eq!(v["config"]["l"], 4);
    assert_eq!(v["config"]["trials"], 3);
    assert_eq!(v["config"]["field"], "tilted");
    assert_eq!(v["config"]["base_seed"], 42);

    std::fs::write(&cfg, "workers = 2\n").unwrap();
    assert_eq!(run(&[&MC[..], &["--config", cfg.to_str().unwrap()]].concat()).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["explode"]).status.code(), Some(2));
    assert_eq!(run(&["mc", "--l", "3", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["mc", "--l", "3", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(run(&["count", "--l", "3", "--field", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["expect", "--l", "3", "--policy", "sometimes"]).status.code(), Some(2));
    // a field that vanishes identically leaves a curve of solutions
    assert_eq!(run(&["count", "--l", "3", "--field", "custom:0;0"]).status.code(), Some(1));
    assert_eq!(run(&["mc", "--l", "3", "--trials", "2", "--field", "custom:0;0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn expect_reports_value_and_leading_term() {
    let v = json(&run(&["expect", "--l", "2", "--field", "rotation"]));
    let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
    for k in ["l", "field", "alpha", "value", "error_estimate", "leading_term"] {
        assert!(keys.contains(&k.to_string()), "missing {k}");
    }
    assert!((v["leading_term"].as_f64().unwrap() - 0.14330).abs() < 1e-4);
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn count_emits_points() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("pts.csv");
    let v = json(&run(&["count", "--l", "7", "--seed", "5", "--field", "tilted", "--emit-points", pts.to_str().unwrap()]));
    let text = std::fs::read_to_string(&pts).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("theta,phi,residual,jacobian_det"));
    assert_eq!(lines.count() as u64, v["count"].as_u64().unwrap());
    let c = count(&sample_harmonic(7, 5).unwrap(), &FieldSpec::tilted()).unwrap();
    assert_eq!(v["count"], c);
}

#[test]
fn intensity_grid_and_covariance_report() {
    let out = run(&["intensity", "--l", "5", "--field", "zgrad", "--n-phi", "6", "--n-theta", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 24);
    assert!(text.starts_with("theta,phi,k_v,rho,det_delta\n"));

    let out = run(&["verify-cov", "--l", "7", "--samples", "20"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let header: Vec<_> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "error").unwrap();
    let errors: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(errors.len(), 200);
    assert!(errors.iter().all(|e| *e < 1e-4));
}
