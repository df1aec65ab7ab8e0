//! Experiment driver: JSON configs, seeded runs, metrics and CSV output.

mod config;
mod experiment;
mod metrics;

pub use config::{load_config, Algorithm, MethodSpec, RunConfig};
pub use experiment::{
    build_gossip, compare_methods, run_experiment, summarize, CellFailure, ExperimentResult, MethodSummary,
    PairOrdering, Summary,
};
pub use metrics::{emit_csv, evaluate, write_csv, Evaluation, MetricsRow, CSV_HEADER};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable that replaces the config's `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DFEDDA_OUTPUT_DIR";

pub fn output_dir(cfg: &RunConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir.map_or_else(|| PathBuf::from(&cfg.output_dir), Path::to_path_buf)
}

/// Write `metrics.csv` and the resolved `config.json` into `dir`; returns the CSV path.
pub fn write_outputs(cfg: &RunConfig, result: &ExperimentResult, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
    let csv_path = dir.join("metrics.csv");
    emit_csv(&result.rows, &csv_path)?;
    Ok(csv_path)
}
