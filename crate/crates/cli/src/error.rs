//! Command-line errors and exit codes.

use std::path::PathBuf;

use hom_core::error::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] hom_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 range, 4 fit, 5 protocol, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        let kind = match self {
            CliError::Config { .. } => ErrorKind::Config,
            CliError::Io { .. } => ErrorKind::Io,
            CliError::Core(e) => e.kind(),
        };
        match kind {
            ErrorKind::Io => 1,
            ErrorKind::Config => 2,
            ErrorKind::Range => 3,
            ErrorKind::Fit => 4,
            ErrorKind::Protocol => 5,
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    hom_core::materials::MaterialError,
    hom_core::biphoton::BiphotonError,
    hom_core::interference::InterferenceError,
    hom_core::detection::DetectionError,
    hom_core::estimation::EstimationError,
    hom_core::protocol::ProtocolError
);
