//! Experiment runner: parses a TOML config, validates it, runs one experiment
//! and writes its artifacts under `<out>/<config hash>/`.
//!
//! Every run directory holds
//!
//! * `report.json`: bound reports, fitted constants and estimates,
//! * `series.csv`: columns `time,statistic,value,std_error`; the first column
//!   is the abscissa of the statistic (time, or the ladder value for
//!   refinement and perturbation studies),
//! * `*.dat`: whitespace-separated plot data,
//! * `config.json`: the canonical config the hash is computed from,
//! * `manifest.json`: hash, version, wall time, seed and file list,
//! * `failure.json` when the experiment failed after validation.

pub mod catalog;
pub mod config;
pub mod experiments;
pub mod validate;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::{ExperimentConfig, ExperimentKind};
pub use validate::{validate, Violation};

pub const THREADS_ENV: &str = "SDDELAB_THREADS";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("config has {} violation(s)", .0.len())]
    Validation(Vec<Violation>),
    #[error("experiment failed: {message}")]
    Experiment { run_dir: PathBuf, message: String },
}

impl RunError {
    /// Machine-readable form printed by the binary.
    pub fn to_json(&self) -> Value {
        match self {
            RunError::Parse(m) => serde_json::json!({"error": "parse", "message": m}),
            RunError::Io(m) => serde_json::json!({"error": "io", "message": m}),
            RunError::Validation(v) => serde_json::json!({"error": "validation", "violations": v}),
            RunError::Experiment { run_dir, message } => serde_json::json!({
                "error": "experiment",
                "message": message,
                "run_dir": run_dir.display().to_string(),
            }),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) | RunError::Parse(_) => 2,
            RunError::Io(_) => 3,
            RunError::Experiment { .. } => 4,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub time: f64,
    pub statistic: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// What an experiment produces; written to disk by [`run`].
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub report: serde_json::Map<String, Value>,
    pub series: Vec<SeriesRow>,
    pub plots: Vec<PlotFile>,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.report
            .insert(key.into(), serde_json::to_value(value).expect("report value serializes"));
    }

    pub fn row(&mut self, time: f64, statistic: impl Into<String>, value: f64, std_error: f64) {
        self.series.push(SeriesRow {
            time,
            statistic: statistic.into(),
            value,
            std_error,
        });
    }

    pub fn plot(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<f64>>) {
        self.plots.push(PlotFile {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        });
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub experiment: String,
    pub wall_time_seconds: f64,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub outputs: Vec<String>,
    pub succeeded: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub report: Value,
}

/// `{:.16e}`: 17 significant digits, enough for an exact round trip.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn write_series(path: &Path, rows: &[SeriesRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["time", "statistic", "value", "std_error"])
        .map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record([
            format_float(r.time),
            r.statistic.clone(),
            format_float(r.value),
            format_float(r.std_error),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_plot(path: &Path, plot: &PlotFile) -> Result<(), RunError> {
    let mut text = format!("# {}\n", plot.columns.join(" "));
    for row in &plot.rows {
        let cells: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Resolves the worker count: the explicit value, else `SDDELAB_THREADS`.
pub fn resolve_threads(explicit: Option<usize>) -> Option<usize> {
    explicit.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
}

/// Validates and runs `cfg`, writing its artifacts under `opts.out_dir/<hash>`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let violations = validate(cfg);
    if !violations.is_empty() {
        return Err(RunError::Validation(violations));
    }
    let hash = cfg.hash();
    let run_dir = opts.out_dir.join(&hash);
    fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    let start = Instant::now();
    let mut artifacts = Artifacts::default();
    let result = match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::Io(format!("thread pool: {e}")))?;
            pool.install(|| experiments::dispatch(cfg, &mut artifacts))
        }
        None => experiments::dispatch(cfg, &mut artifacts),
    };
    let wall = start.elapsed().as_secs_f64();

    let mut outputs = vec!["config.json".to_string()];
    write_json(&run_dir.join("config.json"), cfg)?;
    let mut report = Value::Object(artifacts.report.clone());
    report["experiment"] = Value::String(cfg.experiment.name().into());
    report["config_hash"] = Value::String(hash.clone());
    write_json(&run_dir.join("report.json"), &report)?;
    outputs.push("report.json".into());
    write_series(&run_dir.join("series.csv"), &artifacts.series)?;
    outputs.push("series.csv".into());
    for plot in &artifacts.plots {
        let name = format!("{}.dat", plot.name);
        write_plot(&run_dir.join(&name), plot)?;
        outputs.push(name);
    }
    for (name, bytes) in &artifacts.files {
        let path = run_dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        outputs.push(name.clone());
    }
    if let Err(e) = &result {
        write_json(
            &run_dir.join("failure.json"),
            &serde_json::json!({"error": "experiment", "message": e.to_string()}),
        )?;
        outputs.push("failure.json".into());
    }
    outputs.push("manifest.json".into());
    let manifest = RunManifest {
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.experiment.name().into(),
        wall_time_seconds: wall,
        seed: cfg.seed(),
        threads: opts.threads,
        outputs,
        succeeded: result.is_ok(),
    };
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    match result {
        Ok(()) => Ok(RunOutcome {
            run_dir,
            manifest,
            report,
        }),
        Err(e) => Err(RunError::Experiment {
            run_dir,
            message: e.to_string(),
        }),
    }
}

/// Loads, applies the seed override and runs.
pub fn run_file(path: &Path, seed: Option<u64>, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    run(&cfg, opts)
}
