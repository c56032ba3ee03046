//! Crate-wide error type.

use crate::grid::CellId;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinates ({lat}, {lon}) fall outside the map bounding box")]
    OutOfBounds { lat: f64, lon: f64 },

    #[error("unknown vertex {0}")]
    UnknownVertex(CellId),

    #[error("no edge {from} -> {to}")]
    NoSuchEdge { from: CellId, to: CellId },

    #[error("invalid edge {from} -> {to}: {reason}")]
    InvalidEdge {
        from: CellId,
        to: CellId,
        reason: &'static str,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("released cell {released} has zero likelihood under every prior-supported cell{}",
            .timestep.map(|t| format!(" (timestep {t})")).unwrap_or_default())]
    ZeroEvidence {
        released: CellId,
        timestep: Option<u32>,
    },

    #[error("empty time window")]
    EmptyWindow,

    #[error("nonpositive sensitivity {score} for cell {cell}")]
    NonpositiveSensitivity { cell: CellId, score: f64 },

    #[error("zero distance between sensitive cell {sensitive} and neighbor {neighbor}")]
    ZeroDistance {
        sensitive: CellId,
        neighbor: CellId,
    },

    #[error("zero prior mass over the candidate cells")]
    ZeroMass,

    #[error("no protection set over {pool_size} pool cells reaches the error bound \
             (anchor {anchor}, epsilon {epsilon}, e_m {e_m} m){}",
            .timestep.map(|t| format!(" at timestep {t}")).unwrap_or_default())]
    Infeasible {
        anchor: CellId,
        epsilon: f64,
        e_m: f64,
        pool_size: usize,
        timestep: Option<u32>,
    },

    #[error("protection set must contain at least two cells")]
    DegeneratePls,

    #[error("no mechanism distribution for prior-supported cell {0}")]
    MissingMechanism(CellId),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a timestep to errors raised inside a per-step pipeline loop.
    pub(crate) fn at_timestep(self, t: u32) -> Self {
        match self {
            Error::ZeroEvidence { released, .. } => Error::ZeroEvidence {
                released,
                timestep: Some(t),
            },
            Error::Infeasible {
                anchor,
                epsilon,
                e_m,
                pool_size,
                ..
            } => Error::Infeasible {
                anchor,
                epsilon,
                e_m,
                pool_size,
                timestep: Some(t),
            },
            other => other,
        }
    }
}
