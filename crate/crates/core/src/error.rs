use std::fmt;

/// Errors raised by the library.
///
/// Check failures that are part of the mathematics (a Fredholm defect, a
/// degenerate Jacobi operator, a resonant `ε`) carry the measured quantity so
/// callers can report it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("shooting interval does not bracket the ground state: {0}")]
    NoBracket(String),
    #[error("tolerance not met: achieved {achieved:e}, requested {requested:e}")]
    ToleranceNotMet { achieved: f64, requested: f64 },
    #[error("negative radius {0}")]
    NegativeRadius(f64),
    #[error("minimal eigenvalue of the radial sector is {0}, expected a negative value")]
    SpectrumOrderViolation(f64),
    #[error("grid mismatch: expected {expected} nodes, got {got}")]
    GridMismatch { expected: usize, got: usize },
    #[error("right-hand side is not orthogonal to the kernel (relative defect {defect:e})")]
    FredholmViolation { defect: f64 },
    #[error("coercivity estimate {0} is not positive")]
    NonPositiveCoercivity(f64),
    #[error("unsupported manifold: {0}")]
    UnsupportedManifold(String),
    #[error("point at normal distance {distance} lies outside the chart radius {radius}")]
    OutsideChart { distance: f64, radius: f64 },
    #[error("potential value {value} leaves the admissible band [{lo}, {hi}]")]
    BoundViolation { value: f64, lo: f64, hi: f64 },
    #[error("no sign change of the energy derivative on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("submanifold is not stationary: residual {0:e}")]
    NotStationary(f64),
    #[error("Jacobi operator is degenerate: min |eigenvalue| = {0:e}")]
    DegenerateOperator(f64),
    #[error("solver diverged: {0}")]
    SolverDivergence(String),
    #[error("right-hand side has a nonzero projection {0:e}")]
    ProjectionDefect(f64),
    #[error("fixed point is not contracting in component {component} (ratio {ratio})")]
    NotContracting { component: String, ratio: f64 },
    #[error("epsilon {epsilon} is resonant: distance to spectrum {dist:e}")]
    ResonantEpsilon { epsilon: f64, dist: f64 },
    #[error("tube radius {needed} exceeds chart validity {limit}")]
    ChartRadiusExceeded { needed: f64, limit: f64 },
    #[error("{0}")]
    Parse(ParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A scenario parse failure with its location (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at {}:{}: {}", self.line, self.column, self.message)
    }
}

impl From<ParseError> for Error {
    fn from(e: ParseError) -> Self {
        Error::Parse(e)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
