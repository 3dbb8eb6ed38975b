//! Crate-level error that wraps the per-module errors.

use thiserror::Error;

use crate::biphoton::BiphotonError;
use crate::detection::DetectionError;
use crate::estimation::EstimationError;
use crate::interference::InterferenceError;
use crate::materials::MaterialError;
use crate::protocol::ProtocolError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Biphoton(#[from] BiphotonError),
    #[error(transparent)]
    Interference(#[from] InterferenceError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input data or parameters.
    Config,
    /// Wavelength, temperature or count outside a validity range.
    Range,
    /// Fitting, shape or numerical failure.
    Fit,
    /// Measurement protocol fault.
    Protocol,
    /// File system failure.
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Material(e) => e.kind(),
            Error::Biphoton(e) => e.kind(),
            Error::Interference(e) => e.kind(),
            Error::Detection(_) => ErrorKind::Config,
            Error::Estimation(e) => e.kind(),
            Error::Protocol(e) => e.kind(),
        }
    }
}
