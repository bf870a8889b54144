use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HgtError>;

/// Checkpoint decoding failures, kept apart so callers can tell them apart.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"HGTN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("file ends early while reading {0}")]
    Truncated(&'static str),
    #[error("{0}")]
    Corrupt(String),
    #[error("cannot read file: {0}")]
    Unreadable(#[source] io::Error),
}

#[derive(Debug, Error)]
pub enum HgtError {
    #[error(transparent)]
    Core(#[from] hgtnet_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Csv { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("checkpoint {}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl HgtError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        use hgtnet_core::Error as E;
        match self {
            Self::GradCheck(_) => 1,
            Self::Config(_) | Self::Core(E::Config(_) | E::Geometry(_)) => 2,
            Self::Data(_) | Self::Image { .. } | Self::Csv { .. } | Self::Core(_) => 3,
            Self::Io { .. } => 4,
            Self::Checkpoint { .. } => 5,
        }
    }
}
