use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate spectrum: zero spacing between levels {index} and {}", index + 1)]
    DegenerateSpectrum { index: usize },

    #[error("invalid time step {0} (must be positive and finite)")]
    InvalidStep(f64),

    #[error("negative or non-finite time {0}")]
    InvalidTime(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The Lanczos recursion hit a vanishing `b_n^2`; `computed` holds the
    /// signed coefficients obtained before the breakdown.
    #[error("Krylov breakdown at level {level}: |b_n^2| below threshold")]
    KrylovBreakdown { level: usize, computed: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
