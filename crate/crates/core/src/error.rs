use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("unsupported data type code {0}")]
    UnsupportedDtype(i32),
    #[error("truncated payload: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: u64, available: u64 },
    #[error("payload length mismatch: dims imply {expected} bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("affine is not invertible (|det| = {0:e})")]
    NonInvertibleAffine(f64),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("width axis too small to split: {0}")]
    WidthTooSmall(usize),
    #[error("study needs at least 2 post-contrast phases, found {0}")]
    TooFewPhases(usize),
    #[error("study has no pre-contrast volume")]
    MissingPre,
    #[error("mask is not binary: value {0} outside [0, 1]")]
    NonBinaryMask(f32),
    #[error("stack is already normalized")]
    AlreadyNormalized,
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("too few patients: {patients} for k = {k}")]
    TooFewPatients { patients: usize, k: usize },
    #[error("empty ensemble group for {0}")]
    EmptyGroup(String),
    #[error("manifest: {0}")]
    ManifestParse(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("missing blob {0}")]
    MissingBlob(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
