use thiserror::Error;

/// Failure modes shared by every analysis in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is singular (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("coupling function violates required property: {0}")]
    InvalidCoupling(String),
    #[error("travelling-wave frequencies are undefined for N = {0} (need N >= 2)")]
    UnsupportedN(usize),
    #[error("coupling ratio k = 0 cannot be inverted")]
    ZeroK,
    #[error("no equilibria: component {index} of -C^-1 Omega has magnitude {value} >= 1")]
    NoEquilibria { index: usize, value: f64 },
    #[error("coupling matrix is near-singular (k = {0})")]
    NearSingularC(f64),
    #[error("equilibrium is not hyperbolic (min |Re lambda| = {0:e})")]
    NonHyperbolic(f64),
    #[error("unstable manifold has dimension {0}, expected 1")]
    NotOneDimensional(usize),
    #[error("phase condition is degenerate (anchor velocity {0:e})")]
    DegeneratePhaseCondition(f64),
    #[error("several multipliers crossed the unit circle in one step")]
    Ambiguous,
    #[error("no multiplier within 0.1 of -1 (closest {0})")]
    NoDoublingDirection(f64),
    #[error("saddle spectrum is neither a real saddle nor a saddle-focus")]
    NotSaddleFocusOrReal,
    #[error("continuation step underflow at parameter {0}")]
    StepUnderflow(f64),
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
