use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GoaError>;

#[derive(Debug, Error)]
pub enum GoaError {
    /// Bad arguments or configuration; maps to CLI exit code 1.
    #[error("usage error: {0}")]
    Usage(String),

    /// An iterative routine failed to converge or produced non-finite values;
    /// maps to CLI exit code 2.
    #[error("numerical error: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown dataset `{name}`; known names: {}", known.join(", "))]
    Lookup { name: String, known: Vec<String> },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl GoaError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        GoaError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            GoaError::Numerical { .. } => 2,
            _ => 1,
        }
    }
}
