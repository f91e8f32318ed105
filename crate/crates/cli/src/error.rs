//! CLI error taxonomy with the stable exit-code contract:
//! 0 success, 2 config/parse, 3 simulation, 4 fit.

use qmem_core::dynamics::DynamicsError;
use qmem_core::fitting::FitError;
use qmem_core::hilbert::HilbertError;
use qmem_core::lossbudget::LossBudgetError;
use qmem_core::measurement::MeasurementError;
use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SIMULATION: u8 = 3;
pub const EXIT_FIT: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("budget error: {0}")]
    Budget(#[from] LossBudgetError),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("fit error: {0}")]
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Budget(_) => EXIT_CONFIG,
            CliError::Simulation(_) => EXIT_SIMULATION,
            CliError::Fit(_) => EXIT_FIT,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::InvalidModel(_)
            | DynamicsError::InvalidSequence(_)
            | DynamicsError::MalformedGate(_) => CliError::Config(e.to_string()),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

impl From<HilbertError> for CliError {
    fn from(e: HilbertError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MeasurementError> for CliError {
    fn from(e: MeasurementError) -> Self {
        match e {
            MeasurementError::InvalidReadout(_)
            | MeasurementError::InvalidGrid(_)
            | MeasurementError::GridBeyondTruncation { .. }
            | MeasurementError::ShotsMissing => CliError::Config(e.to_string()),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::TooFewPoints { .. } | FitError::InvalidParams(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Fit(other.to_string()),
        }
    }
}
