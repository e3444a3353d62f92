use thiserror::Error;

use crate::bowler::BowlerError;
use crate::dynamics::DynamicsError;
use crate::environment::EnvironmentError;
use crate::model::ConfigError;
use crate::montecarlo::EnsembleError;
use crate::pathintegral::PathIntegralError;
use crate::rain::RainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Math,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Bowler(#[from] BowlerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    PathIntegral(#[from] PathIntegralError),
    #[error(transparent)]
    Rain(#[from] RainError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(ConfigError::Io { .. }) => ErrorKind::Io,
            Error::Config(_) => ErrorKind::Config,
            Error::Ensemble(EnsembleError::InvalidPathCount(_)) => ErrorKind::Config,
            Error::Ensemble(EnsembleError::Task { source, .. }) => source.kind(),
            _ => ErrorKind::Math,
        }
    }
}
