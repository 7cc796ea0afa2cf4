use thiserror::Error;

pub type Result<T> = std::result::Result<T, QpvError>;

#[derive(Debug, Error)]
pub enum QpvError {
    #[error("invalid trial record field `{field}` = {value} (expected 1 or 2)")]
    InvalidRecord { field: &'static str, value: u8 },

    #[error("malformed trial file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("{name} = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("linear program failed: {0}")]
    Lp(#[from] crate::lp::LpError),

    #[error("optimizer failed: {0}")]
    Optimization(String),

    #[error(
        "test factor certification failed: max expectation {max_expectation} exceeds 1 + {margin}"
    )]
    Certification { max_expectation: f64, margin: f64 },

    #[error("test factor is useless for entanglement bounds: average minimum {wbar_min} >= 1")]
    UselessFactor { wbar_min: f64 },

    #[error("test factor is zero on observed cell {cell:#07b}")]
    ZeroFactor { cell: u8 },

    #[error("insufficient calibration data: {0}")]
    InsufficientCalibration(String),

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("geometry: {0}")]
    Geometry(String),
}
