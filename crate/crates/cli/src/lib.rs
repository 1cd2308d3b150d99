//! Config-driven experiment runner for the H-MSBL and MSBL solvers.
//!
//! A run reads one TOML config, executes its trials on a worker pool, and
//! writes a self-describing JSON [`ResultRecord`] plus plot-ready CSVs.

pub mod config;
pub mod experiment;
pub mod plots;

use std::path::{Path, PathBuf};

pub use config::{validate_config, ConfigError, ExperimentConfig, ExperimentKind};
pub use experiment::{run_experiment, timing_sweep, Algorithm, ResultRecord, RunOptions, WORKERS_ENV};
pub use plots::{emit_all, emit_plot_data, PlotKind};

pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigError>),
    #[error(transparent)]
    Core(#[from] hmsbl_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let raw = std::fs::read_to_string(path)?;
    validate_config(&raw).map_err(CliError::Config)
}

pub fn write_record(record: &ResultRecord, dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(RECORD_FILE);
    let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    serde_json::to_writer_pretty(file, record)?;
    Ok(path)
}

pub fn read_record(path: &Path) -> Result<ResultRecord, CliError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}
