use std::io;

use thiserror::Error;

use super::Role;
use crate::codec::CodecError;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("carrier {0:?} is not supported or not available")]
    UnsupportedCarrier(String),
    #[error("cannot reach broker at {addr}: {reason}")]
    BrokerUnreachable { addr: String, reason: String },
    #[error("no replier reachable for {0}")]
    PeerUnreachable(String),
    #[error("address {0} is already in use")]
    AddressInUse(String),
    #[error("endpoint is closed")]
    ClosedEndpoint,
    #[error("envelope topic {actual} does not match endpoint topic {expected}")]
    TopicMismatch { expected: String, actual: String },
    #[error("timed out")]
    TimedOut,
    #[error("operation needs a {expected:?} endpoint, this one is a {actual:?}")]
    WrongRole { expected: Role, actual: Role },
    #[error("remote handler failed: {0}")]
    RemoteFailure(String),
    #[error("transport runtime is closed")]
    RuntimeClosed,
    #[error("name registry: {0}")]
    NameRegistry(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl TransportError {
    pub(crate) fn from_bind(addr: &str, err: io::Error) -> Self {
        if err.kind() == io::ErrorKind::AddrInUse {
            TransportError::AddressInUse(addr.to_string())
        } else {
            TransportError::Io(err)
        }
    }
}
