use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("unsupported spatial rank {rank} for {op}")]
    UnsupportedRank { op: &'static str, rank: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("foreground mask is empty")]
    EmptyForeground,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("infeasible patch bounds: {0}")]
    InfeasibleBounds(String),

    #[error("patch window out of bounds: origin {origin:?} extent {extent:?} image {image:?}")]
    OutOfBounds {
        origin: Vec<usize>,
        extent: Vec<usize>,
        image: Vec<usize>,
    },

    #[error("no valid patch placement after {attempts} attempts")]
    Placement { attempts: usize },

    #[error("poisson solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
