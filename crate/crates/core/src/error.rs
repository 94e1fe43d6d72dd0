use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {lhs:?} vs {rhs:?} ({context})")]
    Dimension {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid parameter: {name} {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("malformed file at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (ce = {ce}, guidance = {guidance})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ce: f64,
        guidance: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            context,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
