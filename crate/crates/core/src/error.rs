use std::path::PathBuf;

/// Errors produced by every stage of the correspondence pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected STT1, found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported rank {0} (must be 1..=5)")]
    BadRank(usize),

    #[error("length mismatch: header declares {expected} bytes of payload, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("truncated header: {0}")]
    Truncated(String),

    #[error("validation failed for video {video_id}: {reason}")]
    Validation { video_id: String, reason: String },

    #[error("unknown pair {src} -> {tgt}")]
    UnknownPair { src: String, tgt: String },

    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },

    #[error("unimplemented matcher: {0}")]
    UnimplementedMatcher(String),

    #[error("unknown matcher: {0}")]
    UnknownMatcher(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-parsable CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::BadMagic(_) => "bad-magic",
            Error::BadRank(_) => "bad-rank",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::Truncated(_) => "truncated",
            Error::Validation { .. } => "validation",
            Error::UnknownPair { .. } => "unknown-pair",
            Error::NonFinite { .. } => "non-finite",
            Error::UnimplementedMatcher(_) => "unimplemented-matcher",
            Error::UnknownMatcher(_) => "unknown-matcher",
            Error::Json(_) => "json",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
