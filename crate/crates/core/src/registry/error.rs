use thiserror::Error;

use crate::codec::CodecError;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("method {0} is already registered")]
    DuplicateMethod(String),
    #[error("no method named {0}")]
    UnknownMethod(String),
    #[error("invalid registration: {0}")]
    InvalidSpec(String),
    #[error("cannot resolve splice marker {marker}")]
    UnresolvedSplice { marker: String },
    #[error("method returned {actual} values for {expected} registrations")]
    ReturnArityMismatch { expected: usize, actual: usize },
    #[error("method {method} is in {actual} mode, expected {expected}")]
    WrongMode {
        method: String,
        expected: super::Mode,
        actual: super::Mode,
    },
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error("mode config: {0}")]
    Parse(String),
    #[error("return {position} does not match its registration: {reason}")]
    PayloadMismatch { position: usize, reason: String },
    #[error("method body failed: {0}")]
    BodyFailed(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}
