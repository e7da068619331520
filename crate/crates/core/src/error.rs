use std::path::PathBuf;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth})")]
    PointBehindCamera { depth: f64 },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("insufficient views: need at least {needed}, got {got}")]
    InsufficientViews { needed: usize, got: usize },

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("all points are collinear")]
    Collinear,

    #[error("homography is singular")]
    SingularHomography,

    #[error("transform is singular")]
    SingularTransform,

    #[error("stereo baseline is zero")]
    ZeroBaseline,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid disparity range: d_min {d_min} > d_max {d_max}")]
    InvalidRange { d_min: i32, d_max: i32 },

    #[error("non-positive disparity {0}")]
    NonPositiveDisparity(f64),

    #[error("percent error undefined: actual is 0 but measured is {measured}")]
    UndefinedError { measured: f64 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
