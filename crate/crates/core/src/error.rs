use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed edge list at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("operation requires a deterministic process, got `{0}`")]
    StochasticProcess(&'static str),

    #[error("attack function `{0}` has no analytic partial derivatives")]
    MissingPartials(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    #[error("dimension {dim} exceeds the dense propagation cap {cap}")]
    SizeCap { dim: usize, cap: usize },

    #[error("trajectory grids do not match")]
    GridMismatch,

    #[error("trajectory lacks stored per-node states")]
    MissingStates,

    #[error("degenerate bound at node {node}: {which} rate is zero")]
    DegenerateBound { node: usize, which: &'static str },

    #[error("horizon {have} is too short, need at least {need}")]
    InsufficientHorizon { have: f64, need: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
