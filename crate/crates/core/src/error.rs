use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// A matrix product or concatenation received incompatible operands.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: String,
        left: (usize, usize),
        right: (usize, usize),
    },
}

impl Error {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        op: impl Into<String>,
        left: (usize, usize),
        right: (usize, usize),
    ) -> Self {
        Error::Shape {
            op: op.into(),
            left,
            right,
        }
    }

    /// Prefixes a shape error's operation name, leaving other errors alone.
    pub(crate) fn in_op(self, context: &str) -> Self {
        match self {
            Error::Shape { op, left, right } => Error::Shape {
                op: format!("{context}: {op}"),
                left,
                right,
            },
            other => other,
        }
    }
}
