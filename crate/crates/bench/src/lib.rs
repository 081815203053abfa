//! Experiment runner for the SDE–RNN attention variants: configuration files,
//! resumable missing-rate sweeps, result tables and degradation curves.

pub mod config;
pub mod error;
pub mod report;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{DatasetConfig, DatasetSource, ExperimentConfig};
pub use error::{BenchError, Result};
pub use report::{emit_curves, emit_table, table_csv, Report, TableStyle};
pub use sweep::{read_results, run_sweep, Cell, CellResult, SweepOptions, SweepOutcome};

/// Writes `table.txt`, `table.md`, `table.csv` and, with two or more rates,
/// `curves/<dataset>.csv` under `dir`. Returns the files written.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| BenchError::io(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put(dir.join("table.txt"), emit_table(report, TableStyle::Plain))?;
    put(dir.join("table.md"), emit_table(report, TableStyle::Markdown))?;
    put(dir.join("table.csv"), table_csv(report))?;
    if report.rates.len() >= 2 {
        for (dataset, csv) in emit_curves(report)? {
            put(dir.join("curves").join(format!("{dataset}.csv")), csv)?;
        }
    }
    Ok(written)
}
