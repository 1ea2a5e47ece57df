use std::path::PathBuf;

use thiserror::Error;

use crate::semantics::SubsetKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown category `{0}` (not in the 80-class vocabulary)")]
    UnknownCategory(String),

    #[error("value {value} outside the classifiable range: {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("measured {what} = {value:.4} falls in an unclassified band")]
    Unclassified { what: &'static str, value: f64 },

    #[error("infeasible {subset:?} probe: {reason}")]
    InfeasibleProbe { subset: SubsetKind, reason: String },

    #[error("could not place {n} objects without overlap (final scale {final_scale:.3})")]
    InfeasiblePlacement { n: usize, final_scale: f64 },

    #[error("cardinality mismatch: expected {expected}, got {got} ({what})")]
    Cardinality {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backend does not advertise the `{0}` capability")]
    MissingCapability(&'static str),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("inpaint step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no instance of `{0}` found")]
    NotFound(String),

    #[error("checksum mismatch for {}", .0.display())]
    Checksum(PathBuf),

    #[error("scorer failed on case `{case_id}`: {reason}")]
    Scorer { case_id: String, reason: String },

    #[error("{0}")]
    PoolExhausted(String),

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures in reaching a backend, as opposed to failures it reported.
    pub fn is_transport(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Step { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}
