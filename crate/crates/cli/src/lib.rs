//! Library side of the `mfd` batch driver: configuration schema, task
//! dispatch and artifact writers.

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;

use mfd_core::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),

    #[error("certificate failure: {0}")]
    Certificate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Certificate(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::OddMoment { .. } => CliError::Certificate(e.to_string()),
            // the requested computation does not apply to the configured model
            Error::NotSymmetric
            | Error::NotEnergyConserving { .. }
            | Error::NotHermitian { .. }
            | Error::NotDensity { .. }
            | Error::DimensionMismatch { .. }
            | Error::SlotOutOfRange { .. }
            | Error::InvalidParameter(_)
            | Error::Unsupported(_) => CliError::Schema(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}
