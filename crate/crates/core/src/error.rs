use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("simulation diverged at step {step}: {reason}")]
    SimulationDiverged { step: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed content: {message}")]
    Format { path: PathBuf, message: String },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Coarse class used for process exit codes and FFI status codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape { .. } | Error::Parameter(_) | Error::Validation(_) | Error::Parse(_) => {
                ErrorClass::Validation
            }
            Error::Io { .. } | Error::Format { .. } => ErrorClass::Io,
            Error::DegenerateDensity(_)
            | Error::TrainingDiverged(_)
            | Error::SimulationDiverged { .. }
            | Error::Numerical(_) => ErrorClass::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation => 2,
            ErrorClass::Io => 3,
            ErrorClass::Numerical => 4,
        }
    }
}
