use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z_C = {z})")]
    BehindCamera { z: f64 },

    #[error("intrinsic matrix has a singular leading block")]
    SingularIntrinsic,

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("extrinsic matrix is not invertible")]
    SingularExtrinsic,

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("class map inconsistent with raster: {0}")]
    InconsistentClassMap(String),

    #[error("unknown instance id {0}")]
    UnknownInstance(u32),

    #[error("no foreground points to assign attributes from")]
    NoForeground,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
