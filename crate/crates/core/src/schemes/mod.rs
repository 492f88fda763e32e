//! Runnable scenarios for the three communication schemes.
//!
//! * **Mirroring**: one publisher and several listeners invoke the same
//!   registered method; every listener gets the publisher's return.
//! * **Forwarding**: a payload travels a chain of topics, possibly across
//!   carriers, relayed by intermediaries.
//! * **Channeling**: one method returns several payloads of different kinds,
//!   each over its own middleware slot; a listener lacking a slot gets
//!   `None` in that position.
//!
//! Roles that talk over tcp run as separate OS processes (the `wrapify role`
//! subcommand) when an executable is supplied; roles joined by an inproc
//! topic always share a process.

mod methods;
mod roles;
mod runner;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::registry::RegistryError;
use crate::topic::InvalidTopic;
use crate::transport::TransportError;

pub use methods::{
    channel_method, forward_method, mirror_method, CHANNEL_GROUP, CHANNEL_METHOD, CHANNEL_SLOTS, CHANNEL_TOPICS,
    FORWARD_GROUP, FORWARD_METHOD, MIRROR_GROUP, MIRROR_METHOD, MIRROR_TOPIC,
};
pub use roles::{bytes_digest, payload_digest, run_group, GroupSpec, RoleEvent, RoleSpec, RoleTask};
pub use runner::{role_main, run_channel_scenario, run_forward_scenario, run_mirror_scenario};

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid scenario argument: {0}")]
    InvalidArgument(String),
    #[error("scenario did not finish in time")]
    ScenarioTimeout,
    #[error("role {role} failed: {message}")]
    RoleFailed { role: String, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Topic(#[from] InvalidTopic),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("role protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    /// Executable providing the `role` subcommand. Without one, every role
    /// runs as a thread of the calling process.
    pub exe: Option<PathBuf>,
    pub timeout: Duration,
    /// Seed for generated payloads.
    pub seed: u64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            exe: None,
            timeout: Duration::from_secs(30),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleInfo {
    pub name: String,
    pub mode: String,
    pub transport: String,
    /// OS process the role ran in.
    #[serde(default)]
    pub pid: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: String,
    pub event: String,
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub roles: Vec<RoleInfo>,
    pub transcript: Vec<TranscriptEntry>,
    pub passed: bool,
    /// Why the scenario failed, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Number of distinct OS processes the roles ran in.
    pub fn process_count(&self) -> usize {
        let pids: std::collections::BTreeSet<u32> = self.roles.iter().filter_map(|r| r.pid).collect();
        pids.len()
    }

    /// Digests recorded for `role`, in transcript order.
    pub fn digests_of(&self, role: &str) -> Vec<Option<String>> {
        self.transcript
            .iter()
            .filter(|e| e.role == role && e.event != "ready")
            .map(|e| e.digest.clone())
            .collect()
    }
}
