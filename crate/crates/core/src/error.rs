use std::io;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed volume header: {0}")]
    Header(String),

    #[error("payload length mismatch: header implies {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("unknown payload kind `{0}`")]
    UnknownKind(String),

    #[error("expected a {expected} volume, file holds {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("voxel ({x}, {y}, {z}) outside grid {nx}x{ny}x{nz}")]
    OutOfRange {
        x: usize,
        y: usize,
        z: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },

    #[error("invalid grid shape: {0}")]
    Shape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gradient direction is not unit length (norm {0})")]
    NonUnitGradient(f64),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("voxel is outside the phantom mask")]
    OutsideMask,

    #[error("phantom shape {0} is too small to place the bundles")]
    PhantomTooSmall(String),

    #[error("too few voxels: need at least {needed}, found {found}")]
    TooFewVoxels { needed: usize, found: usize },

    #[error("statistic contains a single class; ROC is undefined")]
    SingleClass,

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Tags the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
