use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes or vector layouts disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A non-finite value appeared while evaluating a loss program.
    #[error("non-finite value at node {node} ({op})")]
    NonFiniteNode { node: usize, op: &'static str },

    /// A non-finite value appeared in an iterative procedure.
    #[error("non-finite value at step {step}: {what}")]
    NonFiniteStep { step: usize, what: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A configured size limit would be exceeded.
    #[error("capacity exceeded: {what} needs {needed}, limit is {limit}")]
    Capacity {
        what: &'static str,
        needed: usize,
        limit: usize,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers themselves rather than by
    /// the inputs or the environment.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteNode { .. } | Error::NonFiniteStep { .. } | Error::Numeric(_)
        )
    }
}
