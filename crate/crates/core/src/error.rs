use thiserror::Error;

use crate::model::EnergyModel;
use crate::tour::TourTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid node set: {0}")]
    InvalidSet(String),

    #[error("node set {0:?} does not induce a connected subgraph")]
    InvalidCis(Vec<usize>),

    #[error("refusing to enumerate: CIS count bound {bound} exceeds cap {cap}")]
    CapExceeded { cap: u64, bound: u64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("tour exceeded {cap} steps")]
    TourTruncated { cap: u64, partial: Box<TourTrace> },

    #[error("tours truncated on {attempts} attempts (cap {cap} steps); raise the supernode budget to shorten tours")]
    PersistentTruncation { attempts: usize, cap: u64 },

    #[error("supernode: {0}")]
    Supernode(String),

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("invalid {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("outputs differ from the recorded run: {}", .0.join(", "))]
    NotReproduced(Vec<String>),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        last_good: Box<EnergyModel>,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Io { .. }
                | Error::InvalidSet(_)
                | Error::InvalidCis(_)
                | Error::CapExceeded { .. }
                | Error::Config { .. }
                | Error::Shape(_)
                | Error::Version { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
