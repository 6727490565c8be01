//! Error type shared by all subsystems.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DglError {
    #[error("invalid well set: {0}")]
    InvalidWellSet(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("under-resolved problem: {0}")]
    UnderResolved(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DglError>;
