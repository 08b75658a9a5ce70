use thiserror::Error;

use pgo_core::{GraphError, SolveError};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("graph has no edges")]
    NoEdges,
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("cycles and action range must be positive")]
    InvalidConfig,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint header {0:?}")]
    Header(String),
    #[error("malformed checkpoint at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("checkpoint block {name} has shape {got:?}, network expects {expected:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("cannot encode an empty graph")]
    Empty,
    #[error("cursor edge {cursor} out of range for {edges} edges")]
    Cursor { cursor: usize, edges: usize },
    #[error("{got} orientations for {expected} nodes")]
    Dimension { expected: usize, got: usize },
}
