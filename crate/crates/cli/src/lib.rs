//! Configuration, task dispatch and reports for the `tonelli-lab` runner.

pub mod config;
pub mod report;
pub mod tasks;

use std::path::Path;
use std::time::Instant;

use thiserror::Error;
use tonelli_core::hamiltonian::CATALOGUE_VERSION;
use tonelli_core::{ErrorClass, LabError};

use crate::config::ExperimentConfig;
use crate::report::{config_hash, RunReport, Versions};
use crate::tasks::Table;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {error}")]
    Lab { context: String, error: LabError },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 1 configuration, 2 numerical failure, 3 violated
    /// hypothesis.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Lab { error, .. } => match error.class() {
                ErrorClass::Config => 1,
                ErrorClass::Numeric => 2,
                ErrorClass::Hypothesis => 3,
            },
        }
    }
}

/// Run a validated config and assemble its report.
pub fn run(config: &ExperimentConfig) -> Result<(RunReport, Option<Table>), CliError> {
    let start = Instant::now();
    let out = tasks::run(config)?;
    let passed = out.assertions.iter().all(|a| a.passed);
    let report = RunReport {
        task: config.task.to_string(),
        seed: config.seed,
        config: config.clone(),
        config_hash: config_hash(config),
        catalogue_version: CATALOGUE_VERSION.into(),
        versions: Versions::current(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        timings: out.timings,
        payload: out.payload,
        assertions: out.assertions,
        passed,
    };
    Ok((report, out.table))
}

pub fn read_report(path: &Path) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Shortest round-trip form; scientific outside `[1e-4, 1e15)`.
fn csv_number(v: f64) -> String {
    if v == 0.0 || (1e-4..1e15).contains(&v.abs()) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_csv(path: &Path, table: &Table) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| csv_number(*v))).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
