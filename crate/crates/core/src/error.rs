use thiserror::Error;

pub type Result<T, E = SitError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SitError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{group} layer {layer}: expected input width {expected}, got {found}")]
    LayerShape {
        group: &'static str,
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence { epoch: usize, batch: usize, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("corpus format: {0}")]
    Format(#[from] FormatError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl SitError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        SitError::Argument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SitError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Failures decoding a binary corpus file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("corpus holds zero frames")]
    EmptyCorpus,

    #[error("malformed: {0}")]
    Malformed(String),
}
