use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by light-field loading, warping, and the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing view file: {0}")]
    MissingView(PathBuf),

    #[error("inconsistent dimensions: expected {expected_w}x{expected_h}, got {got_w}x{got_h} in {path}")]
    InconsistentDimensions {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
        path: PathBuf,
    },

    #[error("invalid grid size {0}: must be odd and >= 3")]
    InvalidGridSize(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("search radius {radius} exceeds image size {width}x{height}")]
    RadiusTooLarge {
        radius: usize,
        width: usize,
        height: usize,
    },

    #[error("no contributing views: every offset is degenerate")]
    NoContributingViews,

    #[error("penalty parameter must be positive, got {0}")]
    NonPositiveMu(f64),

    #[error("svd failed: input contains non-finite values")]
    SvdFailed,

    #[error("objective term `{term}` is non-finite")]
    NonFiniteObjective { term: &'static str },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("secondary layer motion pushes content fully out of frame")]
    OutOfFrame,

    #[error("bad {format} file {path}: {reason}")]
    BadFormat {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
