use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("category {category} out of range for {n_alternatives} alternatives")]
    CategoryOutOfRange { category: usize, n_alternatives: usize },

    #[error("covariate `{0}` is constant and cannot be standardized")]
    ConstantCovariate(String),

    #[error("degenerate direction: tail sum of squares is zero at position {0}")]
    DegenerateDirection(usize),

    #[error("angle {index} = {value} outside its domain [0, {upper})")]
    AngleOutOfDomain { index: usize, value: f64, upper: f64 },

    #[error("upper-triangle loading ({row}, {col}) must be zero, found {value}")]
    NonZeroUpperTriangle { row: usize, col: usize, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-positive conditional variance {variance} for utility {coordinate}")]
    ConditionalVariance { coordinate: usize, variance: f64 },

    #[error("zero diagonal element at {0}")]
    ZeroDiagonal(usize),

    #[error("optimizer failed on margin {margin}: {reason}")]
    Optimizer { margin: usize, reason: String },

    #[error("root finder failed: {0}")]
    RootFinder(String),

    #[error("zero predictive probability at observation {0}")]
    ZeroProbability(usize),

    #[error("sampler invariant `{invariant}` violated at iteration {iteration}")]
    Invariant { invariant: String, iteration: usize },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
