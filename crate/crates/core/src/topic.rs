//! Topic paths and carrier names.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rejected topic string.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid topic {0:?}: expected /seg(/seg)* with seg in [A-Za-z0-9_-]+")]
pub struct InvalidTopic(pub String);

/// A validated topic path such as `/example/read_msg`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Topic(String);

impl Topic {
    pub fn new(path: impl Into<String>) -> Result<Self, InvalidTopic> {
        let path = path.into();
        if is_valid_topic(&path) {
            Ok(Topic(path))
        } else {
            Err(InvalidTopic(path))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn is_valid_topic(path: &str) -> bool {
    let Some(rest) = path.strip_prefix('/') else {
        return false;
    };
    rest.split('/').all(|seg| {
        !seg.is_empty()
            && seg
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
    })
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Topic {
    type Err = InvalidTopic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::new(s)
    }
}

impl TryFrom<String> for Topic {
    type Error = InvalidTopic;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Topic::new(value)
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> String {
        t.0
    }
}

impl AsRef<str> for Topic {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Name of the transport protocol a topic travels over.
///
/// `tcp` and `inproc` are built in. `mcast` is recognised but no transport
/// implements it. Any other name routes to an adapter registered under that
/// name on the [`Runtime`](crate::transport::Runtime).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Carrier {
    Tcp,
    Inproc,
    Mcast,
    Named(String),
}

impl Carrier {
    pub fn name(&self) -> &str {
        match self {
            Carrier::Tcp => "tcp",
            Carrier::Inproc => "inproc",
            Carrier::Mcast => "mcast",
            Carrier::Named(n) => n,
        }
    }
}

impl From<&str> for Carrier {
    fn from(s: &str) -> Self {
        match s {
            "tcp" => Carrier::Tcp,
            "inproc" => Carrier::Inproc,
            "mcast" => Carrier::Mcast,
            other => Carrier::Named(other.to_string()),
        }
    }
}

impl From<String> for Carrier {
    fn from(s: String) -> Self {
        Carrier::from(s.as_str())
    }
}

impl From<Carrier> for String {
    fn from(c: Carrier) -> String {
        c.name().to_string()
    }
}

impl FromStr for Carrier {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Carrier::from(s))
    }
}

impl fmt::Display for Carrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
