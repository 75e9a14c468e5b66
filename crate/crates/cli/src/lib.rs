//! Batch runner for the path-dependent control experiments: a TOML config
//! in, a CSV of results and a summary out.

pub mod coeffs;
pub mod commands;
pub mod config;
pub mod expr;
pub mod presets;
pub mod report;

use std::io;
use std::path::PathBuf;

use pathctl::bshjb::BshjbError;
use pathctl::phjb::PhjbError;
use pathctl::{BpError, CalcError, ControlError, PathError};
use thiserror::Error;

use config::{CliLayer, ConfigError, ExperimentConfig};

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Io = 1,
    Config = 2,
    Contract = 3,
    Property = 4,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    pub fn status(&self) -> Status {
        match self {
            RunError::Config(_) => Status::Config,
            RunError::Contract(_) => Status::Contract,
            RunError::Io(_) => Status::Io,
        }
    }
}

// errors that stem from what the config asked for map to status 2, the
// ones raised by a solver refusing its input map to status 3
impl From<ControlError> for RunError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::EmptyControls
            | ControlError::BadControl { .. }
            | ControlError::DimensionMismatch { .. }
            | ControlError::BadHorizon { .. }
            | ControlError::Path(_) => RunError::Config(ConfigError::invalid("coefficients", e)),
            _ => RunError::Contract(e.to_string()),
        }
    }
}

impl From<PhjbError> for RunError {
    fn from(e: PhjbError) -> Self {
        match e {
            PhjbError::Control(c) => c.into(),
            PhjbError::BadGrid | PhjbError::NotScalar { .. } | PhjbError::MissingDerivative(_) => {
                RunError::Config(ConfigError::invalid("run", e))
            }
            _ => RunError::Contract(e.to_string()),
        }
    }
}

impl From<BshjbError> for RunError {
    fn from(e: BshjbError) -> Self {
        match e {
            BshjbError::Control(c) => c.into(),
            _ => RunError::Contract(e.to_string()),
        }
    }
}

impl From<CalcError> for RunError {
    fn from(e: CalcError) -> Self {
        RunError::Contract(e.to_string())
    }
}

impl From<BpError> for RunError {
    fn from(e: BpError) -> Self {
        RunError::Config(ConfigError::invalid("bp", e))
    }
}

impl From<PathError> for RunError {
    fn from(e: PathError) -> Self {
        RunError::Contract(e.to_string())
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub failures: Vec<String>,
}

/// Load, run and write. Property failures are reported through
/// [`Outcome::status`]; everything else is an error.
pub fn run(config_text: &str, cli: &CliLayer) -> Result<Outcome, RunError> {
    let config = config::load(config_text, cli)?;
    run_config(&config)
}

pub fn run_config(config: &ExperimentConfig) -> Result<Outcome, RunError> {
    let report = commands::run(config)?;
    let name = config.subcommand.name();
    let (csv, summary) = report.write(&config.out, name, &config.resolved_toml())?;
    let status = if report.failures.is_empty() { Status::Ok } else { Status::Property };
    Ok(Outcome { status, csv, summary, failures: report.failures })
}
