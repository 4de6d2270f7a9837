//! Error type shared by every module of the engine.

use std::path::PathBuf;

use thiserror::Error;

use crate::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("loss evaluation failed: {0}")]
    Evaluation(String),

    #[error("label overlap on class {class_id}: {context}")]
    LabelOverlap { class_id: ClassId, context: String },

    #[error("plan violation: {0}")]
    PlanViolation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by the command-line front end to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Divergence(_) | Error::Evaluation(_) => ErrorKind::Runtime,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    /// Short stable name of the variant, printed by the CLI.
    pub fn class_name(&self) -> &'static str {
        match self {
            Error::Shape(_) => "ShapeError",
            Error::DegenerateInput(_) => "DegenerateInputError",
            Error::InvalidArgument(_) => "ArgumentError",
            Error::Contract(_) => "ContractError",
            Error::Divergence(_) => "TrainingDivergenceError",
            Error::Evaluation(_) => "EvaluationError",
            Error::LabelOverlap { .. } => "LabelOverlapError",
            Error::PlanViolation(_) => "PlanViolationError",
            Error::Data(_) => "DataError",
            Error::Generation(_) => "GenerationError",
            Error::Format(f) => f.class_name(),
            Error::Io { .. } => "IoError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Runtime,
    Io,
}

/// Failures specific to the binary embedding archive and its manifest.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected \"FCAE\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),

    #[error("archive truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },

    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(u64),

    #[error("checksum mismatch: header {expected:#018x}, payload {actual:#018x}")]
    ChecksumMismatch { expected: u64, actual: u64 },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("archive validation failed: {0}")]
    Validation(String),

    #[error("session label sets overlap: class {class_id} appears in sessions {first} and {second}")]
    Disjointness {
        class_id: ClassId,
        first: usize,
        second: usize,
    },
}

impl FormatError {
    pub fn class_name(&self) -> &'static str {
        match self {
            FormatError::BadMagic { .. } => "BadMagicError",
            FormatError::UnsupportedVersion(_) => "VersionError",
            FormatError::Truncated { .. } => "TruncationError",
            FormatError::TrailingBytes(_) => "TrailingBytesError",
            FormatError::ChecksumMismatch { .. } => "ChecksumError",
            FormatError::Manifest(_) => "ManifestError",
            FormatError::Validation(_) => "ValidationError",
            FormatError::Disjointness { .. } => "DisjointnessError",
        }
    }
}
