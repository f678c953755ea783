use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rectangle: [{x0}, {x1}] x [{y0}, {y1}]")]
    DegenerateRect { x0: f64, x1: f64, y0: f64, y1: f64 },

    #[error("mesh needs at least 2 nodes per direction, got {nx} x {ny}")]
    TooFewNodes { nx: usize, ny: usize },

    #[error("{what} is not resolved by the mesh lines")]
    Misaligned { what: String },

    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("coefficient is not positive at node {node} (value {value})")]
    NonPositiveCoefficient { node: usize, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("Cholesky factorization failed: matrix is not positive definite")]
    Factorization,

    #[error("time stepping became unstable at step {step}")]
    Unstable { step: usize },

    #[error(
        "CFL condition violated: tau = {tau:.4e} exceeds the admissible {limit:.4e} for sigma = {sigma}"
    )]
    Cfl { tau: f64, limit: f64, sigma: f64 },

    #[error("observation series {series} is identically zero; relative noise is undefined")]
    ZeroSeries { series: usize },

    #[error("operation requires a {expected} observation")]
    ObservationKind { expected: &'static str },

    #[error("solver failed in PDPS iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("PDPS iteration {iteration} produced a non-finite objective")]
    NonFinite { iteration: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by invalid input, as opposed to failures during a run.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::DegenerateRect { .. }
            | Error::TooFewNodes { .. }
            | Error::Misaligned { .. }
            | Error::OutsideDomain { .. }
            | Error::Dimension { .. }
            | Error::Cfl { .. }
            | Error::ZeroSeries { .. }
            | Error::ObservationKind { .. }
            | Error::Config(_)
            | Error::Parse { .. } => true,
            Error::NonPositiveCoefficient { .. }
            | Error::Factorization
            | Error::Unstable { .. }
            | Error::Solver { .. }
            | Error::NonFinite { .. }
            | Error::Io(_) => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
