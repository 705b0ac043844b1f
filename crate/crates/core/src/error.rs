use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or operator was constructed with parameters that violate its invariants.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("backend not applicable: {0}")]
    Backend(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("denoiser inversion failed: {0}")]
    Inversion(String),

    /// The envelope objective keeps improving at the edge of the search window.
    #[error("envelope objective unbounded at x = {x} (search radius reached {radius})")]
    Unbounded { x: f64, radius: f64 },

    /// The prox is set-valued at this point, so the gradient identity does not apply.
    #[error("prox is multi-valued at x = {x}: minimizers {minimizers:?}")]
    MultiValuedProx { x: f64, minimizers: Vec<f64> },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate}, last relative change {change:e})")]
    PowerIteration {
        iterations: usize,
        estimate: f64,
        change: f64,
    },

    /// The solver configuration violates a hypothesis of the convergence analysis.
    #[error("solver configuration: {0}")]
    SolverConfig(String),

    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("trace: {0}")]
    Trace(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from user input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::DimensionMismatch { .. }
                | Error::Backend(_)
                | Error::SolverConfig(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}
