//! Experiment runner: reads a TOML config, runs one experiment, writes a
//! JSON summary and CSV detail tables.

pub mod catalog;
pub mod config;
pub mod experiments;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub use config::ExperimentConfig;
use experiments::Assertion;

pub const SCHEMA: &str = "exclab-summary/1";
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] exclusion_core::Error),
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
}

/// Contents of `summary.json`. Nothing here depends on timing or thread count.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub code_version: &'static str,
    pub config_fingerprint: String,
    pub name: Option<String>,
    pub kind: &'static str,
    pub seed: u64,
    pub replicas: usize,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    pub results: Value,
}

#[derive(Debug, Serialize)]
struct Runtime<'a> {
    config_fingerprint: &'a str,
    wall_clock_seconds: f64,
    threads: usize,
}

#[derive(Debug)]
pub struct RunOutput {
    pub summary: Summary,
    pub summary_json: String,
    pub dir: PathBuf,
    pub wall_clock_seconds: f64,
}

/// Default results directory, `results/<name-or-kind>-<fingerprint>`.
pub fn default_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    let stem = cfg.name.clone().unwrap_or_else(|| cfg.experiment.kind().to_string());
    PathBuf::from("results").join(format!("{stem}-{}", cfg.fingerprint()))
}

/// Validate, run and write `summary.json`, `<table>.csv` files and
/// `runtime.json` into `dir`.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput, LabError> {
    if cfg.threads == Some(0) {
        return Err(LabError::Config("threads must be positive".into()));
    }
    let prep = config::Prepared::new(cfg)?;
    let start = Instant::now();
    let outcome = experiments::run_experiment(cfg, &prep)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    let fingerprint = cfg.fingerprint();
    let summary = Summary {
        schema: SCHEMA,
        code_version: CODE_VERSION,
        config_fingerprint: fingerprint.clone(),
        name: cfg.name.clone(),
        kind: cfg.experiment.kind(),
        seed: cfg.seed,
        replicas: cfg.replicas,
        passed: outcome.assertions.iter().all(|a| a.passed),
        assertions: outcome.assertions,
        results: outcome.results,
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), &summary_json)?;
    for (stem, csv) in &outcome.tables {
        std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    }
    let threads = cfg.threads.unwrap_or_else(rayon_threads);
    let runtime = Runtime { config_fingerprint: &fingerprint, wall_clock_seconds, threads };
    std::fs::write(dir.join("runtime.json"), serde_json::to_string_pretty(&runtime).expect("runtime serializes") + "\n")?;
    Ok(RunOutput { summary, summary_json, dir: dir.to_path_buf(), wall_clock_seconds })
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
