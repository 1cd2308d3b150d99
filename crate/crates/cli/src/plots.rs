//! Flat CSV files, one per figure panel.
//!
//! Headers are fixed:
//!
//! | file              | columns                                                                  |
//! |-------------------|--------------------------------------------------------------------------|
//! | `timing.csv`      | `algorithm,mv,grid_size,iterations,median_seconds,per_iteration_seconds` |
//! | `scatter.csv`     | `trial,algorithm,is_truth,u,v`                                           |
//! | `convergence.csv` | `algorithm,iteration,mean_rmse,trials`                                   |
//!
//! Truth rows in `scatter.csv` carry `algorithm = truth` and `is_truth = 1`.
//! An absent per-iteration time is an empty field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::experiment::{ConvergenceRow, ResultRecord, TimingRow};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Timing,
    Scatter,
    Convergence,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Timing, PlotKind::Scatter, PlotKind::Convergence];

    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Timing => "timing.csv",
            PlotKind::Scatter => "scatter.csv",
            PlotKind::Convergence => "convergence.csv",
        }
    }

    fn header(self) -> &'static [&'static str] {
        match self {
            PlotKind::Timing => &[
                "algorithm",
                "mv",
                "grid_size",
                "iterations",
                "median_seconds",
                "per_iteration_seconds",
            ],
            PlotKind::Scatter => &["trial", "algorithm", "is_truth", "u", "v"],
            PlotKind::Convergence => &["algorithm", "iteration", "mean_rmse", "trials"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub trial: usize,
    pub algorithm: String,
    pub is_truth: u8,
    pub u: f64,
    pub v: f64,
}

pub fn scatter_rows(record: &ResultRecord) -> Vec<ScatterRow> {
    let mut rows = Vec::new();
    for t in &record.trials {
        rows.extend(t.truth.iter().map(|p| ScatterRow {
            trial: t.trial,
            algorithm: "truth".into(),
            is_truth: 1,
            u: p.u,
            v: p.v,
        }));
        for o in &t.outcomes {
            let Some(est) = &o.estimates else { continue };
            rows.extend(est.pairs.iter().map(|p| ScatterRow {
                trial: t.trial,
                algorithm: o.algorithm.label().into(),
                is_truth: 0,
                u: p.u,
                v: p.v,
            }));
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV for `kind` into `dir` and returns its path. A record with
/// nothing for that panel yields a header-only file.
pub fn emit_plot_data(record: &ResultRecord, kind: PlotKind, dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(kind.file_name());
    match kind {
        PlotKind::Timing => write_rows::<TimingRow>(&path, kind.header(), &record.timing)?,
        PlotKind::Scatter => write_rows(&path, kind.header(), &scatter_rows(record))?,
        PlotKind::Convergence => write_rows::<ConvergenceRow>(&path, kind.header(), &record.convergence)?,
    }
    Ok(path)
}

pub fn emit_all(record: &ResultRecord, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    PlotKind::ALL
        .iter()
        .map(|&k| emit_plot_data(record, k, dir))
        .collect()
}

/// Reads rows back from a file written by [`emit_plot_data`].
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}
