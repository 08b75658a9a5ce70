use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum Se2Error {
    #[error("angle is not finite: {0}")]
    NonFinite(f64),
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("state has {got} poses but the graph has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("edge {index} references node {node} but the graph has {n} nodes")]
    DanglingEdge { index: usize, node: usize, n: usize },
    #[error("edge {index} is a self loop on node {node}")]
    SelfLoop { index: usize, node: usize },
    #[error("no odometry edge ({from}, {to}); the odometry chain is broken")]
    MissingOdometry { from: usize, to: usize },
    #[error("graph has no nodes")]
    Empty,
}

#[derive(Debug, Error)]
pub enum G2oError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("normal matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("translation system is disconnected: node {node} is not reachable from the anchor")]
    Disconnected { node: usize },
}
