//! Error taxonomy shared across the library.
//!
//! Every fallible operation reports which contract it violated: shape
//! mismatches name both shapes, parse errors carry path and line number,
//! checkpoint errors distinguish corruption from configuration mismatch.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("{op}: dimension mismatch: {detail}")]
    Dim { op: &'static str, detail: String },

    /// An index (gather row, neighbor id, class label, ...) is out of range.
    #[error("{op}: index {index} out of range for extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    /// A scalar argument is outside its documented domain.
    #[error("{op}: invalid parameter: {detail}")]
    Param { op: &'static str, detail: String },

    /// Degenerate geometry (coincident points, empty cloud, ...).
    #[error("geometry: {0}")]
    Geometry(String),

    /// Text-format parse failure with 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Checkpoint file did not start with the expected magic bytes.
    #[error("checkpoint {path}: bad magic (not a model checkpoint)")]
    CkptMagic { path: String },

    /// Checkpoint format version is newer than this library understands.
    #[error("checkpoint {path}: unsupported format version {version}")]
    CkptVersion { path: String, version: u32 },

    /// Checkpoint ended before all declared payload was read.
    #[error("checkpoint {path}: truncated: {detail}")]
    CkptTruncated { path: String, detail: String },

    /// Stored tensors do not match what the stored config implies.
    #[error("checkpoint {path}: tensor mismatch: {detail}")]
    CkptTensor { path: String, detail: String },

    /// Checkpoint is valid but incompatible with the requested configuration.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// Invalid run configuration (unknown key, unparsable value, ...).
    #[error("config: {0}")]
    Config(String),

    /// Training produced a non-finite quantity.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An API was called out of order (e.g. optimizer step without gradients).
    #[error("state: {0}")]
    State(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dim {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Param {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Formats a shape like `[64, 3]` for error messages.
pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    format!("{shape:?}")
}
