//! End-to-end study: corpus → features → per-experiment training and
//! evaluation → correlation and Sobol analysis → LIME profiles → report
//! bundle, all driven by one [`StudyConfig`].

pub mod config;
pub mod report;
pub mod study;

use std::fs;
use std::path::Path;

pub use config::{DatasetSpec, GridSpec, LimeSpec, ModelSpec, StatsOptions, StudyConfig};
pub use report::{
    correlation_csv, emit_report, features_csv, fig6_csv, json_bytes, lime_files, read_records_csv, records_csv,
    render_files, scatter_svg, FileEntry, REPORT_DIR,
};
pub use study::{
    experiment_seed, graph_digest, ExperimentMode, ExperimentOutcome, ExperimentStatus, RunLog, StageStatus, Study,
    StudyReport,
};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs the whole study, writes the report bundle and the run log, and
/// returns the report. Stage failures are recorded in the report rather
/// than returned; see [`StudyReport::failed_stages`].
pub fn run_study(study: &Study) -> Result<StudyReport> {
    let report = study.run(ExperimentMode::TrainAndEval)?;
    emit_report(&report, &study.out_dir)?;
    study.write_run_log()?;
    Ok(report)
}
