use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems found while loading or validating a scene bundle.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("missing asset `{field}`: {path}")]
    MissingAsset { field: String, path: PathBuf },
    #[error("dimension mismatch in `{field}`: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        field: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("invalid manifest field `{field}`: {reason}")]
    ManifestInvalid { field: String, reason: String },
}

impl SceneError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::ManifestInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Class of a rejected planner output. Every class triggers a resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaErrorKind {
    /// Not parseable at all (no JSON document, no frame lines).
    Malformed,
    MissingField,
    BadType,
    FrameBudgetMismatch,
    PhaseCountOutOfRange,
    FrameCount,
    UnknownObject,
    MissingObject,
    InvalidBox,
    InvalidGoal,
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("schema error ({kind:?}) at `{location}`: {detail}")]
pub struct SchemaError {
    pub kind: SchemaErrorKind,
    pub location: String,
    pub detail: String,
}

impl SchemaError {
    pub fn new(kind: SchemaErrorKind, location: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            kind,
            location: location.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication error: {0}")]
    Auth(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid weights: {0}")]
    Weight(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty candidate set")]
    EmptyCandidateSet,
    #[error("bad length: {0}")]
    BadLength(String),
    #[error("track length mismatch: {0}")]
    LengthMismatch(String),
    #[error("object mismatch: {0}")]
    ObjectMismatch(String),
    #[error("image codec error: {0}")]
    Codec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
