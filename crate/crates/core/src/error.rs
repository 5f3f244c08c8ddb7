use std::path::PathBuf;

use thiserror::Error;

use crate::cohort::Split;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("invalid range: {lo} > {hi}")]
    InvalidRange { lo: i64, hi: i64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("wrong voxel type: expected {expected}, found {found}")]
    WrongDtype {
        expected: &'static str,
        found: &'static str,
    },
    #[error("axis {axis} has a single sample but spacing {spacing} differs from target {target}")]
    DegenerateAxis { axis: usize, spacing: f64, target: f64 },
    #[error("crop center {center_mm:?} mm lies outside the volume")]
    CenterOutside { center_mm: [f64; 3] },
    #[error("{path}: line {line}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },
    #[error("duplicate patient id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: bad HPV label `{value}` (expected 0 or 1)")]
    BadLabel { line: u64, value: String },
    #[error("split `{0}` has no samples")]
    EmptySplit(Split),
    #[error("both classes need at least one sample (n_pos={n_pos}, n_neg={n_neg})")]
    EmptyClass { n_pos: usize, n_neg: usize },
    #[error("activation cache does not belong to the current parameters")]
    StaleCache,
    #[error("ROC/AUC needs both classes present")]
    OneClassOnly,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::IoAt {
            path: path.into(),
            source,
        })
    }
}
