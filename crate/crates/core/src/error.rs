use std::io;

use thiserror::Error;

use crate::trainer::TrainReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible sketch: expected fingerprint {expected:#018x}, found {found:#018x}")]
    IncompatibleSketch { expected: u64, found: u64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged {
        epoch: usize,
        last_report: Box<TrainReport>,
    },

    #[error("gradient check failed: max relative error {max_rel_err:.3e} exceeds {tolerance:.1e}")]
    GradientCheck { max_rel_err: f64, tolerance: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::IncompatibleSketch { .. }
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Io(_) => 3,
            Error::TrainingDiverged { .. } | Error::GradientCheck { .. } => 4,
        }
    }
}
