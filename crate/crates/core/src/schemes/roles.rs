//! Scenario roles and the code that runs a group of them.
//!
//! A group is a set of roles that share an in-process bus. It runs in two
//! phases: every role first opens its endpoints and reports `ready`; after
//! the `go` signal each role acts on its own thread and reports a `result`.

use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::methods::{
    channel_method, forward_method, mirror_method, CHANNEL_GROUP, CHANNEL_METHOD, CHANNEL_SLOTS,
    FORWARD_GROUP, FORWARD_METHOD, MIRROR_GROUP, MIRROR_METHOD,
};
use super::SchemeError;
use crate::codec::{Codec, DecodeOptions, NativeValue};
use crate::registry::{Call, Mode, Payload, Registry};
use crate::topic::{Carrier, Topic};
use crate::transport::{
    Bridge, BrokerAddrs, EndpointOptions, InprocTransport, Runtime, RuntimeConfig, Transport,
};

/// Hex SHA-256 of the payload in its native wire form.
pub fn payload_digest(codec: &Codec, payload: &Payload) -> Result<String, SchemeError> {
    Ok(bytes_digest(&codec.encode_native(&payload.to_native())?))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum RoleTask {
    /// Invokes the mirror method in publish mode. `input` is native JSON.
    MirrorPublish { middleware: String, msg: String, input: String },
    MirrorListen { middleware: String },
    /// Publishes `payload` (native JSON) on the first hop.
    ForwardSource { topic: String, middleware: String, payload: String },
    /// Relays one envelope between two hops.
    ForwardBridge {
        from_topic: String,
        from_middleware: String,
        to_topic: String,
        to_middleware: String,
    },
    ForwardSink { topic: String, middleware: String },
    ChannelPublish { seed: u64 },
    ChannelListen { seed: u64 },
}

impl RoleTask {
    pub fn mode(&self) -> &'static str {
        match self {
            RoleTask::MirrorPublish { .. } | RoleTask::ForwardSource { .. } | RoleTask::ChannelPublish { .. } => {
                Mode::Publish.name()
            }
            RoleTask::MirrorListen { .. } | RoleTask::ForwardSink { .. } | RoleTask::ChannelListen { .. } => {
                Mode::Listen.name()
            }
            RoleTask::ForwardBridge { .. } => "bridge",
        }
    }

    /// Middleware names this role opens endpoints on.
    pub fn middlewares(&self) -> Vec<&str> {
        match self {
            RoleTask::MirrorPublish { middleware, .. }
            | RoleTask::MirrorListen { middleware }
            | RoleTask::ForwardSource { middleware, .. }
            | RoleTask::ForwardSink { middleware, .. } => vec![middleware],
            RoleTask::ForwardBridge {
                from_middleware,
                to_middleware,
                ..
            } => vec![from_middleware, to_middleware],
            RoleTask::ChannelPublish { .. } | RoleTask::ChannelListen { .. } => CHANNEL_SLOTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    pub task: RoleTask,
    /// Middleware names made unavailable to this role.
    #[serde(default)]
    pub disabled: Vec<String>,
}

/// Roles that run together in one process and share its in-process bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub roles: Vec<RoleSpec>,
    pub broker: Option<BrokerAddrs>,
    pub registry_path: Option<PathBuf>,
    /// Slot name → backing adapter name, e.g. `ros` → `tcp`.
    #[serde(default)]
    pub slots: Vec<(String, String)>,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum RoleEvent {
    Ready {
        role: String,
        /// OS process the role runs in.
        #[serde(default)]
        pid: u32,
    },
    Result {
        role: String,
        /// Digest per return position; `None` where nothing was received.
        positions: Vec<Option<String>>,
        #[serde(default)]
        fwd_hops: Option<u64>,
    },
    Error {
        role: String,
        message: String,
    },
}

enum Prepared {
    Invoke {
        registry: Registry,
        group: &'static str,
        method: &'static str,
        call: Call,
        /// Report wire digests and forwarding hops of what was received.
        inspect: bool,
    },
    Bridge(Bridge),
}

fn parse_native(codec: &Codec, text: &str) -> Result<NativeValue, SchemeError> {
    Ok(codec.decode_native(text.as_bytes(), &DecodeOptions::default())?)
}

fn role_runtime(group: &GroupSpec, role: &RoleSpec, inproc: &Arc<InprocTransport>) -> Result<Runtime, SchemeError> {
    let mut cfg = RuntimeConfig::default();
    if let Some(b) = &group.broker {
        cfg.broker = b.clone();
    }
    if let Some(p) = &group.registry_path {
        cfg.registry_path = p.clone();
    }
    let rt = Runtime::new(cfg);
    rt.register_transport(inproc.clone() as Arc<dyn Transport>);
    for (slot, backing) in &group.slots {
        rt.bind_slot(slot, &Carrier::from(backing.as_str()))?;
    }
    for name in &role.disabled {
        rt.set_available(name, false);
    }
    Ok(rt)
}

fn prepare(role: &RoleSpec, rt: Runtime, timeout: Duration) -> Result<Prepared, SchemeError> {
    let codec = Codec::new();
    let registry = Registry::new(rt.clone());
    registry.set_timeout(Some(timeout));
    let invoke = |registry: Registry, group, method, mode, call: Call, inspect| -> Result<Prepared, SchemeError> {
        registry.activate_communication(group, method, mode)?;
        registry.prepare(group, method, &call)?;
        Ok(Prepared::Invoke {
            registry,
            group,
            method,
            call,
            inspect,
        })
    };
    match &role.task {
        RoleTask::MirrorPublish { middleware, msg, input } => {
            registry.register(mirror_method(parse_native(&codec, input)?))?;
            let call = Call::new(vec![middleware.as_str().into(), msg.as_str().into()]);
            invoke(registry, MIRROR_GROUP, MIRROR_METHOD, Mode::Publish, call, false)
        }
        RoleTask::MirrorListen { middleware } => {
            registry.register(mirror_method(NativeValue::Null))?;
            let call = Call::new(vec![middleware.as_str().into()]).kwarg("blocking", true);
            invoke(registry, MIRROR_GROUP, MIRROR_METHOD, Mode::Listen, call, false)
        }
        RoleTask::ForwardSource {
            topic,
            middleware,
            payload,
        } => {
            registry.register(forward_method())?;
            let call = Call::new(vec![
                parse_native(&codec, payload)?,
                topic.as_str().into(),
                middleware.as_str().into(),
            ]);
            invoke(registry, FORWARD_GROUP, FORWARD_METHOD, Mode::Publish, call, false)
        }
        RoleTask::ForwardSink { topic, middleware } => {
            registry.register(forward_method())?;
            let call = Call::new(vec![NativeValue::Null, topic.as_str().into(), middleware.as_str().into()]);
            invoke(registry, FORWARD_GROUP, FORWARD_METHOD, Mode::Listen, call, true)
        }
        RoleTask::ForwardBridge {
            from_topic,
            from_middleware,
            to_topic,
            to_middleware,
        } => {
            let (from, to) = (Topic::new(from_topic.as_str())?, Topic::new(to_topic.as_str())?);
            let bridge = Bridge::open(
                &rt,
                (&from, &Carrier::from(from_middleware.as_str())),
                (&to, &Carrier::from(to_middleware.as_str())),
                &EndpointOptions::default(),
            )?;
            Ok(Prepared::Bridge(bridge))
        }
        RoleTask::ChannelPublish { seed } => {
            registry.register(channel_method(*seed))?;
            invoke(registry, CHANNEL_GROUP, CHANNEL_METHOD, Mode::Publish, Call::default(), false)
        }
        RoleTask::ChannelListen { seed } => {
            registry.register(channel_method(*seed))?;
            invoke(registry, CHANNEL_GROUP, CHANNEL_METHOD, Mode::Listen, Call::default(), false)
        }
    }
}

fn act(name: &str, prepared: Prepared, deadline: Instant) -> Result<RoleEvent, SchemeError> {
    let codec = Codec::new();
    match prepared {
        Prepared::Invoke {
            registry,
            group,
            method,
            call,
            inspect,
        } => {
            let out = registry.invoke(group, method, &call)?;
            let mut positions = out
                .iter()
                .map(|p| p.as_ref().map(|p| payload_digest(&codec, p)).transpose())
                .collect::<Result<Vec<_>, _>>()?;
            let mut fwd_hops = None;
            if inspect {
                let envs = registry.last_envelopes(group, method)?;
                positions = envs
                    .iter()
                    .map(|e| e.as_ref().map(|e| bytes_digest(&e.payload().concat())))
                    .collect();
                fwd_hops = envs.first().and_then(Option::as_ref).map(|e| e.header().fwd_hops());
            }
            Ok(RoleEvent::Result {
                role: name.to_string(),
                positions,
                fwd_hops,
            })
        }
        Prepared::Bridge(mut bridge) => {
            while bridge.forwarded() == 0 {
                let left = deadline.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    return Err(SchemeError::ScenarioTimeout);
                }
                bridge.forward_one(left.min(Duration::from_millis(100)))?;
            }
            Ok(RoleEvent::Result {
                role: name.to_string(),
                positions: vec![],
                fwd_hops: None,
            })
        }
    }
}

/// Runs every role of `group`: prepares all, reports `ready` for each,
/// waits for `go`, then acts concurrently. Failures are reported as `error`
/// events rather than returned.
pub fn run_group<E, G>(group: &GroupSpec, emit: E, go: G)
where
    E: Fn(RoleEvent) + Send + Sync,
    G: FnOnce() -> bool,
{
    let timeout = Duration::from_millis(group.timeout_ms);
    let deadline = Instant::now() + timeout;
    let inproc = Arc::new(InprocTransport::new());
    let fail = |role: &RoleSpec, e: SchemeError| {
        emit(RoleEvent::Error {
            role: role.name.clone(),
            message: e.to_string(),
        })
    };

    let mut prepared = Vec::with_capacity(group.roles.len());
    for role in &group.roles {
        match role_runtime(group, role, &inproc).and_then(|rt| prepare(role, rt, timeout)) {
            Ok(p) => prepared.push((role, p)),
            Err(e) => {
                fail(role, e);
                return;
            }
        }
    }
    for (role, _) in &prepared {
        emit(RoleEvent::Ready {
            role: role.name.clone(),
            pid: std::process::id(),
        });
    }
    if !go() {
        return;
    }
    thread::scope(|s| {
        for (role, p) in prepared {
            let emit = &emit;
            s.spawn(move || match act(&role.name, p, deadline) {
                Ok(ev) => emit(ev),
                Err(e) => emit(RoleEvent::Error {
                    role: role.name.clone(),
                    message: e.to_string(),
                }),
            });
        }
    });
}
