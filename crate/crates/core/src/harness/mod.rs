//! Experiment runner: synthetic dataset generation, limit-verification
//! experiments, sweeps, CSV output. This module is the user-facing surface
//! behind the `ibvi` CLI.

pub mod config;
pub mod data;
pub mod experiments;
pub mod nets;
pub mod table;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use table::ResultTable;

use crate::gaussian::GaussianError;
use crate::metrics::MetricsError;
use crate::numerics::NumericsError;
use crate::objectives::ObjectiveError;
use crate::optim::OptimError;
use crate::oracles::OracleError;
use crate::parametrization::ScalingError;
use crate::varlinear::VarLinearError;
use crate::varnet::VarNetError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Model(#[from] VarLinearError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Net(#[from] VarNetError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Outcome of one acceptance-style threshold evaluated by an experiment.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Everything an experiment run produces: named tables plus the threshold
/// checks evaluated on them.
#[derive(Debug)]
pub struct RunSummary {
    pub experiment: String,
    pub tables: Vec<(String, ResultTable)>,
    pub checks: Vec<CheckOutcome>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the configured experiment and returns its tables and checks.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    let start = Instant::now();
    let name = config.experiment().to_string();
    let (tables, checks) = match name.as_str() {
        "regression-bias" => experiments::regression::run(config)?,
        "ensemble-equivalence" => experiments::regression::run_ensemble(config)?,
        "classification-bias" => experiments::classification::run(config)?,
        "error-identity" => experiments::uncertainty::run_error_identity(config)?,
        "monotone-uncertainty" => experiments::uncertainty::run_monotone(config)?,
        "samples-vs-lr" => experiments::nets_experiments::run_samples_vs_lr(config)?,
        "coord-check" => experiments::nets_experiments::run_coord_check(config)?,
        "lr-transfer" => experiments::nets_experiments::run_lr_transfer(config)?,
        "gvi-compare" => experiments::gvi::run_compare(config)?,
        "toy-demo" => experiments::gvi::run_toy_demo(config)?,
        other => return Err(HarnessError::UnknownExperiment(other.to_string())),
    };
    Ok(RunSummary {
        experiment: name,
        tables,
        checks,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Writes tables, the resolved config, and a run manifest into `out_dir`.
pub fn write_outputs(
    summary: &RunSummary,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    for (name, table) in &summary.tables {
        let path = out_dir.join(format!("{name}.csv"));
        std::fs::write(&path, table.to_csv())?;
    }
    std::fs::write(out_dir.join("config.resolved.ini"), config.to_ini())?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "experiment = {}", summary.experiment);
    let _ = writeln!(manifest, "seed = {}", config.seed());
    let _ = writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "wall_time_s = {:.3}", summary.wall_time_s);
    let _ = writeln!(
        manifest,
        "tables = {}",
        summary
            .tables
            .iter()
            .map(|(n, t)| format!("{n}({} rows)", t.n_rows()))
            .collect::<Vec<_>>()
            .join(", ")
    );
    for check in &summary.checks {
        let _ = writeln!(
            manifest,
            "check.{} = {} ({})",
            check.name,
            if check.passed { "pass" } else { "FAIL" },
            check.detail
        );
    }
    std::fs::write(out_dir.join("manifest.txt"), manifest)?;
    Ok(())
}
