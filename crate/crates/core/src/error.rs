use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between fields")]
    GridMismatch,

    #[error("field has {found} values, grid has {expected} nodes")]
    FieldLength { expected: usize, found: usize },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("state outside positive cone: u = {value:e} at node {node}")]
    NotPositive { node: usize, value: f64 },

    #[error("f-domain violation: S = {value} outside {domain} for `{name}`")]
    FDomainViolation {
        name: String,
        value: f64,
        domain: String,
    },

    #[error("parabolicity lost: margin {margin:e} on [{lo}, {hi}]")]
    ParabolicityLost { margin: f64, lo: f64, hi: f64 },

    #[error("`{name}` is not strictly decreasing: f'({at}) = {slope:e}")]
    NotDecreasing { name: String, at: f64, slope: f64 },

    #[error("`{name}` is not homogeneous (defect {defect:e})")]
    NotHomogeneous { name: String, defect: f64 },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
