use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qdhole::config::RunConfig;

fn qdhole(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdhole")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn default_toml() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

#[test]
fn run_writes_artifacts_with_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qdhole(&["run", "ramsey", "--shots", "100", "--seed", "5", "--no-plot", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("ramsey_5.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "# seed = 5"));
    assert!(csv.lines().any(|l| l == "# config:"));
    assert!(csv.contains("[system]"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ramsey_5.report.json")).unwrap()).unwrap();
    assert!(report["config"].as_str().unwrap().contains("[noise]"));
    assert!(report["analysis"]["derived"]["frequency_hz"].as_f64().is_some());
}

#[test]
fn csv_is_independent_of_threads_and_output_location() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let o = qdhole(&["run", "ramsey", "--shots", "50", "--seed", "9", "--no-plot", "--threads", threads, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    let x = fs::read(a.path().join("ramsey_9.csv")).unwrap();
    let y = fs::read(b.path().join("ramsey_9.csv")).unwrap();
    assert!(x == y);
}

#[test]
fn configuration_errors_exit_with_one() {
    assert_eq!(code(&qdhole(&["run", "bogus"])), 1);
    assert_eq!(code(&qdhole(&["reproduce", "9Z"])), 1);
    assert_eq!(code(&qdhole(&["run", "ramsey", "--shots", "x"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[sweep.ramsey]\ndelay = { values = [1.0] }\n").unwrap();
    assert_eq!(code(&qdhole(&["validate", "--config", bad.to_str().unwrap()])), 1);
    fs::write(&bad, "[noise]\nt1_us = -1.0\n").unwrap();
    assert_eq!(code(&qdhole(&["validate", "--config", bad.to_str().unwrap()])), 1);
}

#[test]
fn required_fit_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("two.toml");
    fs::write(&cfg, "[sweep.t1]\ntau = { values = [1e-9, 2e-9] }\n").unwrap();
    let out = dir.path().to_str().unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&qdhole(&["run", "t1", "--config", c, "--shots", "1", "--no-plot", "--out", out])), 0);
    assert_eq!(code(&qdhole(&["run", "t1", "--config", c, "--shots", "1", "--no-plot", "--require-fit", "--out", out])), 3);
}

fn close(a: &toml::Value, b: &toml::Value, path: &str) {
    use toml::Value::*;
    match (a, b) {
        (Float(x), Float(y)) => assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{path}: {x} vs {y}"),
        (Table(x), Table(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, v) in x {
                close(v, &y[k], &format!("{path}.{k}"));
            }
        }
        (Array(x), Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            x.iter().zip(y).for_each(|(u, v)| close(u, v, path));
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn shipped_config_equals_defaults() {
    let loaded = RunConfig::load(&default_toml()).unwrap();
    let base = RunConfig::default();
    let a: toml::Value = toml::from_str(&loaded.echo().unwrap()).unwrap();
    let b: toml::Value = toml::from_str(&base.echo().unwrap()).unwrap();
    close(&a, &b, "");
    let o = qdhole(&["validate", "--config", default_toml().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok:"));
}
