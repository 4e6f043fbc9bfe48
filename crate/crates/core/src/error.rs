use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate gain estimate at sensor {index}: |g| = {modulus:e}")]
    DegenerateGain { index: usize, modulus: f64 },

    #[error("degenerate model response at sensor {sensor}: |v| = {modulus:e}")]
    DegenerateResponse { sensor: usize, modulus: f64 },

    #[error("ill-conditioned power system: condition number {condition:e}")]
    IllConditioned { condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used for process exit codes and the C ABI status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Domain,
    Degenerate,
    Numerical,
    Config,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Domain => "domain",
            ErrorCategory::Degenerate => "degenerate",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
        }
    }
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Domain(_) | Error::DimensionMismatch { .. } => ErrorCategory::Domain,
            Error::DegenerateGain { .. }
            | Error::DegenerateResponse { .. }
            | Error::IllConditioned { .. } => ErrorCategory::Degenerate,
            Error::Numerical(_) => ErrorCategory::Numerical,
            Error::Stage { source, .. } => source.category(),
            Error::Config(_) => ErrorCategory::Config,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }

    /// Innermost error, with stage wrappers peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
