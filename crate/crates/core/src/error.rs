use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dtype error: {0}")]
    Dtype(String),

    #[error("unsupported transform length {0} (power of two required)")]
    UnsupportedLength(usize),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("empty neighborhood for query point {index} at {coords:?}")]
    EmptyNeighborhood { index: usize, coords: Vec<f64> },

    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    #[error("division guard: {0}")]
    DivisionGuard(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Container {
        path: PathBuf,
        #[source]
        source: ContainerError,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, arguments) rather
    /// than failures while running a pipeline.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Config { .. } | Error::UnsupportedDomain(_)
        )
    }
}

/// Failures while decoding a container file.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("payload checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("truncated file")]
    Truncated,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("duplicate entry name `{0}`")]
    DuplicateEntry(String),
    #[error("missing entry `{0}`")]
    MissingEntry(String),
}

impl ContainerError {
    /// Distinct numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            ContainerError::BadMagic(_) => 10,
            ContainerError::Version { .. } => 11,
            ContainerError::Checksum { .. } => 12,
            ContainerError::Truncated => 13,
            ContainerError::Header(_) => 14,
            ContainerError::DuplicateEntry(_) => 15,
            ContainerError::MissingEntry(_) => 16,
        }
    }
}
