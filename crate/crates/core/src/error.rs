use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node} has degree one; eliminate tree-like branches by direct summation before assigning edge-uniform weights")]
    DegreeOne { node: usize },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("certificate construction failed at elimination step {step}: {reason}")]
    Certificate { step: usize, reason: String },

    #[error("{nodes} nodes exceeds the enumeration cap of {cap}")]
    TooLarge { nodes: usize, cap: usize },

    #[error("elimination needs a table over {width} variables, above the limit of {limit}")]
    WidthExceeded { width: usize, limit: usize },

    #[error("node {node} has a vanishing belief exponent (sum of incident rho equals 1) and degree {degree}")]
    DegenerateExponent { node: usize, degree: usize },

    #[error("node {node} has zero belief for the requested spin")]
    DegenerateMarginal { node: usize },

    #[error("beliefs violate local consistency by {violation:e} (tolerance {tol:e})")]
    Inconsistent { violation: f64, tol: f64 },

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("message passing did not converge at lambda = {lambda} (residual {residual:e})")]
    NonConvergent { lambda: f64, residual: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
