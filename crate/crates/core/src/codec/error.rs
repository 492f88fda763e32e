use thiserror::Error;

use crate::topic::InvalidTopic;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("plugin {0:?} is already registered")]
    DuplicatePlugin(String),
    #[error("invalid plugin id {0:?}: must be non-empty and contain no '.' or '$'")]
    InvalidPluginId(String),
    #[error("no plugin registered under {0:?}")]
    UnknownPlugin(String),
    #[error("no registered plugin accepts this value")]
    NoMatchingPlugin,
    #[error("value nesting exceeds the maximum depth of {max}")]
    DepthExceeded { max: usize },
    #[error("non-finite float {0} has no JSON representation")]
    NonFiniteFloat(f64),
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("plugin {plugin:?} failed to encode: {reason}")]
    PluginEncodeFailure { plugin: String, reason: String },
    #[error("plugin {plugin:?} failed to decode: {reason}")]
    PluginDecodeFailure { plugin: String, reason: String },
    #[error("invalid dense array: {0}")]
    InvalidArray(String),
    #[error("image geometry mismatch: expected {expected} bytes, got {actual}")]
    GeometryMismatch { expected: usize, actual: usize },
    #[error("unsupported image: {0}")]
    InvalidImage(String),
    #[error("audio sample count mismatch: expected {expected} samples, got {actual}")]
    SampleCountMismatch { expected: usize, actual: usize },
    #[error("audio sample {index} is {value}, outside [-1, 1]")]
    SampleOutOfRange { index: usize, value: f32 },
    #[error("invalid audio properties: {0}")]
    InvalidAudio(String),
    #[error("expected a {expected:?} envelope, got {actual:?}")]
    KindMismatch { expected: &'static str, actual: String },
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error(transparent)]
    InvalidTopic(#[from] InvalidTopic),
}
