use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        tolerance: f64,
    },

    #[error("root bracket could not be established: {0}")]
    Bracket(String),

    #[error("filter breakdown at step {step} (t = {t}): {reason}")]
    FilterBreakdown {
        step: usize,
        t: f64,
        reason: String,
        /// Density snapshot at the failing step.
        density: Vec<f64>,
    },

    #[error("candidate (alpha2 = {alpha2}, sigma2 = {sigma2}): {source}")]
    Candidate {
        alpha2: f64,
        sigma2: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("no admissible candidate in parameter grid ({excluded} excluded)")]
    EmptyGrid { excluded: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse category used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParams(_) | Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Version { .. }
            | Error::NotFound(_)
            | Error::Io { .. } => ErrorKind::Data,
            Error::Quadrature { .. }
            | Error::Bracket(_)
            | Error::FilterBreakdown { .. }
            | Error::EmptyGrid { .. } => ErrorKind::Numerical,
            Error::Candidate { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
