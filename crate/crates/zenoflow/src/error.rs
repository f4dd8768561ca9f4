use thiserror::Error;

/// Errors raised by lattice construction, the simulation engines and the
/// analytic flow formulas.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice dimensions {lx}x{ly}: both must be at least 1")]
    InvalidDimensions { lx: usize, ly: usize },

    #[error("unsupported lattice kind for this operation: {0}")]
    UnsupportedKind(String),

    #[error("step index {index} out of range 1..={period}")]
    StepOutOfRange { index: usize, period: usize },

    #[error("cut at x = {x_cut} passes through site {site}")]
    CutThroughSite { x_cut: f64, site: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("epsilon {0} outside [0, 1]")]
    EpsilonOutOfRange(f64),

    #[error("hop probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("invalid protocol parameters: {0}")]
    InvalidParams(String),

    #[error("density evolution requires a counting field of zero, found theta = {0}")]
    NonzeroTheta(f64),

    #[error("stationary eigenspace of the bulk cycle matrix has dimension {0} (> 1)")]
    DegenerateStationary(usize),

    #[error("pair correction requires perfect switching (n*tau = pi/2), found n*tau = {0}")]
    NotPerfectSwitching(f64),

    #[error("numerical health check failed: {0}")]
    NumericalHealth(String),
}

pub type Result<T> = std::result::Result<T, Error>;
