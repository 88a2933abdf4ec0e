use thiserror::Error;

/// Errors produced anywhere in the solve/estimate pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid geometry in element {element}: {reason}")]
    InvalidGeometry { element: usize, reason: String },
    #[error("inverted element {element}: det J = {det}")]
    InvertedElement { element: usize, det: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("stabilization parameter undefined: all coefficient terms are zero")]
    DivisionByZero,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular lumped mass at node {node}")]
    SingularMass { node: usize },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("projection field missing from solution")]
    MissingProjection,
    #[error("solution does not belong to this mesh: {0}")]
    MeshMismatch(String),
    #[error("unknown example '{0}'")]
    UnknownExample(String),
    #[error("expression error: {0}")]
    Expression(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
