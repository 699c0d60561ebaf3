use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate frame at {point:?}: condition number {condition:.3e} of the frame Gram matrix")]
    DegenerateFrame { point: Vec<f64>, condition: f64 },

    #[error("metric is not positive definite at {point:?}")]
    IndefiniteMetric { point: Vec<f64> },

    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("segment index {index} out of range for {segments} segments")]
    IndexOutOfRange { index: usize, segments: usize },

    #[error("grid mismatch: {left} vs {right} segments")]
    GridMismatch { left: usize, right: usize },

    #[error("path is not horizontal: defect {defect:.3e} exceeds tolerance {tolerance:.3e}")]
    NotHorizontal { defect: f64, tolerance: f64 },

    #[error("path has zero length")]
    ZeroLength,

    #[error("line search step underflowed at iteration {iteration}")]
    StepUnderflow { iteration: usize },

    #[error("singular flow Jacobian at t = {t} and {point:?}")]
    SingularJacobian { t: f64, point: Vec<f64> },

    #[error("could not invert the time-{t} flow at {point:?}: residual {residual:.3e}")]
    FlowInversion { t: f64, point: Vec<f64>, residual: f64 },

    #[error("recovered trajectory misses the terminal point by {distance:.3e} (tolerance {tolerance:.3e})")]
    TerminalMismatch { distance: f64, tolerance: f64 },
}
