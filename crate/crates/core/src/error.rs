use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Each variant maps to a stable string code (see [`Error::code`]) so callers
/// and log scrapers can branch on the kind without parsing messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("backend mismatch: `{left}` vs `{right}`")]
    BackendMismatch { left: String, right: String },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{path}: bad magic bytes, expected \"MIDE\"")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported blob version {found} (supported: {supported})")]
    VersionMismatch { path: PathBuf, found: u32, supported: u32 },

    #[error("{path}: truncated or malformed blob: {reason}")]
    MalformedBlob { path: PathBuf, reason: String },

    #[error("backend `{backend}`: manifest declares dimension {declared}, blob has {found}")]
    BackendDimension { backend: String, declared: usize, found: usize },

    #[error("backend `{backend}` declared in manifest but missing from blob")]
    MissingBackend { backend: String },

    #[error("face `{face_id}`, backend `{backend}`: non-finite embedding value")]
    NonFiniteEmbedding { face_id: String, backend: String },

    #[error("face `{face_id}`, backend `{backend}`: zero-norm embedding")]
    ZeroNormEmbedding { face_id: String, backend: String },

    #[error("duplicate face_id `{0}`")]
    DuplicateFaceId(String),

    #[error("count mismatch for {what}: manifest declares {declared}, found {found}")]
    CountMismatch { what: String, declared: u64, found: u64 },

    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("reference bank is empty")]
    EmptyBank,

    #[error("insufficient long-tail identities: requested {requested}, available {available}")]
    InsufficientIdentities { requested: usize, available: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("embedding provider failed: {0}")]
    Provider(String),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::BackendMismatch { .. } => "backend_mismatch",
            Error::ZeroNorm => "zero_norm",
            Error::EmptyInput(_) => "empty_input",
            Error::DegenerateLandmarks(_) => "degenerate_landmarks",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NonFinite(_) => "non_finite",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::MalformedBlob { .. } => "malformed_blob",
            Error::BackendDimension { .. } => "backend_dimension",
            Error::MissingBackend { .. } => "missing_backend",
            Error::NonFiniteEmbedding { .. } => "non_finite_value",
            Error::ZeroNormEmbedding { .. } => "zero_norm_embedding",
            Error::DuplicateFaceId(_) => "duplicate_face_id",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::InvalidRecord { .. } => "invalid_record",
            Error::UnknownId { .. } => "unknown_id",
            Error::EmptyBank => "empty_bank",
            Error::InsufficientIdentities { .. } => "insufficient_identities",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Provider(_) => "provider",
            Error::Csv { .. } => "csv",
        }
    }

    /// True for failures caused by input data (as opposed to bad parameters
    /// or I/O).
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidParameter { .. } | Error::Io { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
