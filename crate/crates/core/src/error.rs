use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or validating a model file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unexpected magic \"{}\" (expected BCNNFP32 or BCNNBIN1 as appropriate)", found.escape_ascii())]
    BadMagic { found: [u8; 8] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("layer {layer}: declared dimensions overflow the payload ({detail})")]
    DimOverflow { layer: usize, detail: String },

    #[error("layer {layer}: unknown layer type code {code}")]
    UnknownLayerType { layer: usize, code: u8 },

    #[error("layer {layer}, kernel {kernel}: nonzero padding bits in packed signs")]
    NonzeroPadding { layer: usize, kernel: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("{0} unexpected trailing bytes after the last record")]
    TrailingBytes(usize),

    #[error("malformed metadata record: {0}")]
    Metadata(String),

    #[error("layer {layer}: {detail}")]
    Layer { layer: usize, detail: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: u64, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("image decode: {0}")]
    Image(String),

    #[error("{path}: {source}")]
    Sample {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Format(#[from] FormatError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
