//! One error type for the whole CLI, carrying the exit-code category:
//! 2 for configuration problems, 3 for model problems, 4 for planning.

use std::fmt;

use tyrt_core::build::BuildError;
use tyrt_core::calib::CalibError;
use tyrt_core::detect::DetectError;
use tyrt_core::forward::ExecError;
use tyrt_core::plan::PlanError;

use crate::format::FormatError;
use crate::pnm::PnmError;
use crate::profile::ProfileError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Model,
    Planning,
}

impl ErrorKind {
    pub fn exit_code(&self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Model => 3,
            ErrorKind::Planning => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError { kind: ErrorKind::Config, message: msg.to_string() }
    }

    pub fn model(msg: impl fmt::Display) -> Self {
        CliError { kind: ErrorKind::Model, message: msg.to_string() }
    }

    pub fn planning(msg: impl fmt::Display) -> Self {
        CliError { kind: ErrorKind::Planning, message: msg.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::config(e)
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::model(e)
    }
}

impl From<PnmError> for CliError {
    fn from(e: PnmError) -> Self {
        CliError::config(e)
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        CliError::config(e)
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::BadBudget { .. } => CliError::config(e),
            _ => CliError::planning(e),
        }
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        CliError::model(e)
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        CliError::model(e)
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::EmptyCalibrationSet => CliError::config(e),
            _ => CliError::model(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(e)
    }
}
