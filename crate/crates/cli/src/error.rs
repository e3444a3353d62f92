use std::fmt;
use std::path::Path;

use odi_core::ErrorKind;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    Config = 2,
    Math = 3,
    Io = 4,
    Validation = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitStatus::Ok => "ok",
            ExitStatus::Config => "config",
            ExitStatus::Math => "math-domain",
            ExitStatus::Io => "io",
            ExitStatus::Validation => "validation-failure",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        CliError { status, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Config, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(ExitStatus::Io, format!("{}: {err}", path.display()))
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Validation, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.status.label(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<odi_core::Error> for CliError {
    fn from(e: odi_core::Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Config => ExitStatus::Config,
            ErrorKind::Math => ExitStatus::Math,
            ErrorKind::Io => ExitStatus::Io,
        };
        CliError::new(status, e.to_string())
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                odi_core::Error::from(e).into()
            }
        }
    )*};
}

from_core!(
    odi_core::model::ConfigError,
    odi_core::bowler::BowlerError,
    odi_core::dynamics::DynamicsError,
    odi_core::pathintegral::PathIntegralError,
    odi_core::rain::RainError,
    odi_core::montecarlo::EnsembleError
);

pub type CliResult<T> = Result<T, CliError>;
