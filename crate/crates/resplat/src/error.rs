//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular matrix: |det| = {det:e} below threshold")]
    SingularMatrix { det: f64 },

    #[error("matrix has negative determinant ({det}); extract flips first")]
    NegativeDeterminant { det: f64 },

    #[error("no real logarithm: eigenvalue {value} lies on the closed negative real axis")]
    NoRealLogarithm { value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("label volumes cannot be interpolated; resample one-hot or soft maps instead")]
    LabelsNotInterpolable,

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("grids too large for explicit operator assembly: {0} voxels (limit {1})")]
    GridTooLarge(usize, usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: f64, classes: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("value {value} overflows {datatype} storage")]
    ValueOverflow { value: f64, datatype: &'static str },

    #[error("malformed volume file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
