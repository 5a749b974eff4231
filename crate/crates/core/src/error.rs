use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("measures live on different grids")]
    GridMismatch,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("regularization must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dense storage capped at {cap} points, grid has {points}")]
    DenseCapExceeded { cap: usize, points: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("block of {block} cells does not tile {points} points per axis")]
    BlockScale { block: usize, points: usize },

    #[error("the congestion model has no pressure")]
    NoPressure,

    #[error("total capacity {capacity} of the grid is below unit mass")]
    InsufficientCapacity { capacity: f64 },

    #[error("initial free energy is not finite")]
    InfiniteEnergy,

    #[error("time {t} outside [0, {end})")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("infeasible couplings: {0}")]
    Infeasible(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(eps))
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
