use std::path::{Path, PathBuf};
use std::process::Command;

use sddelab_cli::{run, run_file, validate, ExperimentConfig, RunError, RunOptions};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).unwrap()
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        out_dir: dir.to_path_buf(),
        threads: Some(2),
    }
}

fn series(dir: &Path) -> Vec<(f64, String, f64, f64)> {
    let mut r = csv::Reader::from_path(dir.join("series.csv")).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[0].parse().unwrap(),
                rec[1].to_string(),
                rec[2].parse().unwrap(),
                rec[3].parse().unwrap(),
            )
        })
        .collect()
}

const OU: &str = r#"
experiment = "simulate"

[grid]
d = 1
delay = 0.25
horizon = 1.0
step = 0.0625

[coefficients]
drift = { id = "ou", rate = 1.0 }
diffusion = { id = "identity" }
functional = { id = "zero" }
initial = [1.0]

[mc]
n_paths = 64
master_seed = 3
"#;

#[test]
fn zero_coefficients_keep_the_initial_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&load("simulate_zero.toml"), &opts(tmp.path())).unwrap();
    let rows = series(&out.run_dir);
    let means: Vec<_> = rows.iter().filter(|r| r.1 == "mean_x0").collect();
    assert!(!means.is_empty());
    for r in means {
        assert_eq!(r.2, 0.5);
        assert_eq!(r.3, 0.0);
    }
    assert!(out.manifest.succeeded);
    for f in ["config.json", "report.json", "series.csv", "manifest.json"] {
        assert!(out.run_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn driftless_sup_moment_bound_holds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&load("exp_sup_moment.toml"), &opts(tmp.path())).unwrap();
    assert_eq!(out.report["bound"]["satisfied"], serde_json::Value::Bool(true));
    let rhs = out.report["bound"]["rhs"].as_f64().unwrap();
    assert!((rhs - (4.0 / 0.6f64.sqrt() - 3.0)).abs() < 1e-12);
}

#[test]
fn rerun_reproduces_csv_bytes_and_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(OU).unwrap();
    let x = run(&cfg, &opts(a.path())).unwrap();
    let y = run(
        &cfg,
        &RunOptions {
            out_dir: b.path().to_path_buf(),
            threads: Some(1),
        },
    )
    .unwrap();
    assert_eq!(x.manifest.config_hash, y.manifest.config_hash);
    assert_eq!(
        std::fs::read(x.run_dir.join("series.csv")).unwrap(),
        std::fs::read(y.run_dir.join("series.csv")).unwrap()
    );
}

#[test]
fn seed_override_changes_hash_and_output() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ou.toml");
    std::fs::write(&path, OU).unwrap();
    let x = run_file(&path, None, &opts(tmp.path())).unwrap();
    let y = run_file(&path, Some(4), &opts(tmp.path())).unwrap();
    assert_ne!(x.run_dir, y.run_dir);
    assert_eq!(y.manifest.seed, Some(4));
    assert_ne!(series(&x.run_dir), series(&y.run_dir));
}

#[test]
fn csv_floats_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&ExperimentConfig::parse(OU).unwrap(), &opts(tmp.path())).unwrap();
    let text = std::fs::read_to_string(out.run_dir.join("series.csv")).unwrap();
    assert!(text.starts_with("time,statistic,value,std_error\n"));
    for line in text.lines().skip(1) {
        let value = line.split(',').nth(2).unwrap();
        let v: f64 = value.parse().unwrap();
        assert_eq!(sddelab_cli::format_float(v), value);
    }
}

#[test]
fn unknown_key_is_rejected() {
    let text = OU.replace("n_paths = 64", "n_paths = 64\nn_pths = 3");
    match ExperimentConfig::parse(&text) {
        Err(RunError::Parse(m)) => assert!(m.contains("n_pths"), "{m}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn parse_error_reports_location() {
    let text = OU.replace("rate = 1.0", "rate = ");
    match ExperimentConfig::parse(&text) {
        Err(RunError::Parse(m)) => assert!(m.contains("line"), "{m}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn valid_config_has_no_violations() {
    assert!(validate(&ExperimentConfig::parse(OU).unwrap()).is_empty());
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let v = validate(&ExperimentConfig::load(&path).unwrap());
        if path.file_name().unwrap() == "invalid_pq.toml" {
            assert!(!v.is_empty());
        } else {
            assert!(v.is_empty(), "{}: {v:?}", path.display());
        }
    }
}

#[test]
fn integrability_condition_is_enforced() {
    let text = OU
        .replace("d = 1\n", "d = 2\n")
        .replace("initial = [1.0]", "initial = [1.0, 0.0]")
        .replace(
            r#"drift = { id = "ou", rate = 1.0 }"#,
            r#"drift = { id = "singular", beta = 0.2, amplitude = 1.0, p = 2.0, q = 2.0 }"#,
        );
    let v = validate(&ExperimentConfig::parse(&text).unwrap());
    assert!(v.iter().any(|x| x.message.contains("integrability")), "{v:?}");
}

#[test]
fn misaligned_delay_is_reported() {
    let text = OU.replace("delay = 0.25", "delay = 0.3");
    let v = validate(&ExperimentConfig::parse(&text).unwrap());
    assert!(v.iter().any(|x| x.field.starts_with("grid")), "{v:?}");
}

#[test]
fn validation_error_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let text = OU.replace("delay = 0.25", "delay = 0.3");
    let err = run(&ExperimentConfig::parse(&text).unwrap(), &opts(tmp.path())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sddelab"))
}

#[test]
fn binary_runs_and_prints_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(configs().join("simulate_zero.toml"))
        .arg("--out")
        .arg(tmp.path())
        .args(["--threads", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["manifest"]["succeeded"], serde_json::Value::Bool(true));
    assert!(Path::new(body["run_dir"].as_str().unwrap()).join("series.csv").exists());
}

#[test]
fn binary_reports_violations_as_json() {
    let out = bin()
        .args(["validate", "--config"])
        .arg(configs().join("invalid_pq.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["valid"], serde_json::Value::Bool(false));
    assert!(!body["violations"].as_array().unwrap().is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["verify-bound", "--config"])
        .arg(configs().join("invalid_pq.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["error"], "validation");
}

#[test]
fn binary_rejects_mismatched_subcommand() {
    let out = bin()
        .args(["krylov", "--config"])
        .arg(configs().join("simulate_zero.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["violations"][0]["field"], "experiment");
}

#[test]
fn binary_reports_missing_file() {
    let out = bin()
        .args(["simulate", "--config", "/nonexistent/x.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["error"], "io");
}
