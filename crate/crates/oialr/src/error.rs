//! Crate-wide error type.
//!
//! Errors are split into two broad classes: bad input (configuration,
//! malformed files, insufficient history) and runtime failures (numerical
//! divergence, I/O during training, internal invariant violations). The CLI
//! maps the first class to exit code 1 and the second to exit code 2.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Matrix dimensions incompatible with the requested operation.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// Input matrix contains NaN or infinite entries.
    NonFiniteInput { op: &'static str },
    /// Jacobi SVD failed to converge within the sweep cap.
    SvdNoConvergence { sweeps: usize },
    /// Invalid configuration value or malformed config file.
    Config(String),
    /// Dataset loading or validation failure.
    Data(String),
    /// Checkpoint file is malformed or corrupt.
    Checkpoint(String),
    /// Not enough snapshot checkpoints for the requested analysis.
    InsufficientHistory { found: usize, needed: usize },
    /// Training loss became NaN or infinite.
    NonFiniteLoss { step: u64 },
    /// Filesystem error with the path that caused it.
    Io { path: String, source: std::io::Error },
    /// Internal invariant violation (a bug, not a user error).
    Internal(String),
}

impl Error {
    /// True for errors caused by bad user input (CLI exit code 1);
    /// false for runtime failures (exit code 2).
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Data(_)
                | Error::Checkpoint(_)
                | Error::InsufficientHistory { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::NonFiniteInput { op } => write!(f, "{op}: input has non-finite entries"),
            Error::SvdNoConvergence { sweeps } => {
                write!(f, "svd did not converge after {sweeps} sweeps")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "corrupt checkpoint: {msg}"),
            Error::InsufficientHistory { found, needed } => write!(
                f,
                "insufficient snapshot history: found {found} checkpoints, need at least {needed}"
            ),
            Error::NonFiniteLoss { step } => {
                write!(f, "training diverged: non-finite loss at step {step}")
            }
            Error::Io { path, source } => write!(f, "{path}: {source}"),
            Error::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
