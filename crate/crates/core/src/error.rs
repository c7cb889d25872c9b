use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size {0}: need a power of two >= 16")]
    InvalidGrid(usize),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: usize, right: usize },

    #[error("right-hand side has nonzero mean {mean:e}; periodic Poisson problem is not solvable")]
    Solvability { mean: f64 },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
