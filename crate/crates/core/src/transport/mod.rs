//! Moving envelopes between endpoints.
//!
//! Two patterns are supported: publish/subscribe and request/reply. A
//! [`Runtime`] owns a set of named transport adapters; every endpoint is
//! opened through it and routed to the adapter named by its carrier.
//!
//! Built-in adapters:
//!
//! - `inproc`: an in-process bus, usable between threads sharing a runtime.
//! - `tcp`: pub/sub through a [`Broker`] process, direct req/rep sockets
//!   discovered through a [`NameRegistry`] file.
//! - `mcast` and the middleware slots `yarp`, `ros`, `ros2`, `zeromq`: listed
//!   but unavailable until an adapter is bound to them.

mod bridge;
mod error;
mod inproc;
mod queue;
pub mod tcp;

use std::error::Error as StdError;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use bridge::{forward_envelope, Bridge};
pub use error::TransportError;
pub use inproc::InprocTransport;
pub use queue::{QueueStats, Wait};
pub use tcp::{Broker, BrokerAddrs, BrokerHandle, NameRegistry, TcpTransport};

use crate::codec::{Header, MessageEnvelope, PayloadKind, ERROR_META_KEY};
use crate::topic::{Carrier, Topic};

pub type Result<T, E = TransportError> = std::result::Result<T, E>;

pub const DEFAULT_QUEUE_SIZE: usize = 5;
pub const ENV_BROKER: &str = "WRAPIFY_BROKER";
pub const ENV_REGISTRY: &str = "WRAPIFY_REGISTRY";
pub const DEFAULT_REGISTRY_PATH: &str = "./.bus_registry.json";

/// Names reserved for third-party middleware adapters.
pub const MIDDLEWARE_SLOTS: [&str; 4] = ["yarp", "ros", "ros2", "zeromq"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Publisher,
    Subscriber,
    Requester,
    Replier,
}

/// Per-endpoint options.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointOptions {
    /// Subscriber buffer bound; the oldest envelope is dropped when full.
    pub queue_size: usize,
    /// Overrides the runtime's broker addresses.
    pub broker: Option<BrokerAddrs>,
    /// Explicit `host:port` for tcp req/rep, bypassing the name registry.
    pub address: Option<String>,
    /// Overrides the runtime's name-registry file.
    pub registry_path: Option<PathBuf>,
    pub connect_timeout: Duration,
}

impl Default for EndpointOptions {
    fn default() -> Self {
        EndpointOptions {
            queue_size: DEFAULT_QUEUE_SIZE,
            broker: None,
            address: None,
            registry_path: None,
            connect_timeout: Duration::from_secs(1),
        }
    }
}

impl EndpointOptions {
    pub fn with_queue_size(mut self, n: usize) -> Self {
        self.queue_size = n;
        self
    }

    pub fn with_address(mut self, addr: impl Into<String>) -> Self {
        self.address = Some(addr.into());
        self
    }

    pub fn with_broker(mut self, broker: BrokerAddrs) -> Self {
        self.broker = Some(broker);
        self
    }

    /// Reads `queue_size`, `broker`, `address` and `registry` from a JSON
    /// map. Other keys are ignored.
    pub fn from_map(map: &Map<String, Value>) -> Result<Self> {
        let bad = |key: &str| TransportError::Protocol(format!("invalid endpoint option {key:?}"));
        let mut opts = EndpointOptions::default();
        if let Some(v) = map.get("queue_size") {
            opts.queue_size = v
                .as_u64()
                .filter(|&n| n > 0)
                .ok_or_else(|| bad("queue_size"))? as usize;
        }
        if let Some(v) = map.get("broker") {
            opts.broker = Some(BrokerAddrs::from_subscriber_side(
                v.as_str().ok_or_else(|| bad("broker"))?,
            )?);
        }
        if let Some(v) = map.get("address") {
            opts.address = Some(v.as_str().ok_or_else(|| bad("address"))?.to_string());
        }
        if let Some(v) = map.get("registry") {
            opts.registry_path = Some(v.as_str().ok_or_else(|| bad("registry"))?.into());
        }
        Ok(opts)
    }
}

/// What a transport offers and whether this process can use it now.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportCapability {
    pub carrier: Carrier,
    pub supports_pubsub: bool,
    pub supports_reqrep: bool,
    pub available: bool,
}

/// Shared flag used to stop serve loops, brokers and bridges.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_raised(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub type HandlerError = Box<dyn StdError + Send + Sync>;

/// A request waiting for its reply.
pub struct IncomingRequest {
    envelope: MessageEnvelope,
    reply: Box<dyn FnOnce(MessageEnvelope) + Send>,
}

impl IncomingRequest {
    pub fn new(envelope: MessageEnvelope, reply: impl FnOnce(MessageEnvelope) + Send + 'static) -> Self {
        IncomingRequest {
            envelope,
            reply: Box::new(reply),
        }
    }

    pub fn envelope(&self) -> &MessageEnvelope {
        &self.envelope
    }

    pub fn respond(self, reply: MessageEnvelope) {
        (self.reply)(reply)
    }

    /// Replies with an error envelope carrying `message` in its header meta.
    pub fn fail(self, message: &str) {
        let topic = self.envelope.topic().clone();
        self.respond(error_reply(&topic, message))
    }
}

impl fmt::Debug for IncomingRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncomingRequest")
            .field("envelope", &self.envelope)
            .finish_non_exhaustive()
    }
}

pub fn error_reply(topic: &Topic, message: &str) -> MessageEnvelope {
    let mut meta = Map::new();
    meta.insert(ERROR_META_KEY.into(), Value::String(message.to_string()));
    MessageEnvelope::new(topic.clone(), Header::now(PayloadKind::Native, meta), vec![])
}

pub trait PublisherEndpoint: Send {
    fn publish(&mut self, env: &MessageEnvelope) -> Result<()>;
    fn close(&mut self) {}
}

pub trait SubscriberEndpoint: Send {
    fn receive(&mut self, wait: Wait) -> Result<Option<MessageEnvelope>>;
    fn stats(&self) -> QueueStats;
    fn close(&mut self) {}
}

pub trait RequesterEndpoint: Send {
    fn request(&mut self, env: &MessageEnvelope, timeout: Option<Duration>) -> Result<MessageEnvelope>;
    fn close(&mut self) {}
}

pub trait ReplierEndpoint: Send {
    fn next_request(&mut self, wait: Wait) -> Result<Option<IncomingRequest>>;
    fn close(&mut self) {}
}

/// A transport adapter. Implementations open endpoints for one carrier name.
pub trait Transport: Send + Sync {
    fn name(&self) -> &str;
    fn capability(&self) -> TransportCapability;
    fn open_publisher(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn PublisherEndpoint>>;
    fn open_subscriber(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn SubscriberEndpoint>>;
    fn open_requester(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn RequesterEndpoint>>;
    fn open_replier(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn ReplierEndpoint>>;
}

enum Inner {
    Publisher(Box<dyn PublisherEndpoint>),
    Subscriber(Box<dyn SubscriberEndpoint>),
    Requester(Box<dyn RequesterEndpoint>),
    Replier(Box<dyn ReplierEndpoint>),
}

/// An open endpoint. Owned by one thread of control at a time; every
/// operation fails with [`TransportError::ClosedEndpoint`] after
/// [`close`](EndpointHandle::close).
pub struct EndpointHandle {
    role: Role,
    topic: Topic,
    carrier: Carrier,
    inner: Option<Inner>,
}

impl fmt::Debug for EndpointHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointHandle")
            .field("role", &self.role)
            .field("topic", &self.topic)
            .field("carrier", &self.carrier)
            .field("closed", &self.inner.is_none())
            .finish()
    }
}

impl EndpointHandle {
    fn new(topic: &Topic, carrier: &Carrier, inner: Inner) -> Self {
        let role = match inner {
            Inner::Publisher(_) => Role::Publisher,
            Inner::Subscriber(_) => Role::Subscriber,
            Inner::Requester(_) => Role::Requester,
            Inner::Replier(_) => Role::Replier,
        };
        EndpointHandle {
            role,
            topic: topic.clone(),
            carrier: carrier.clone(),
            inner: Some(inner),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn topic(&self) -> &Topic {
        &self.topic
    }

    pub fn carrier(&self) -> &Carrier {
        &self.carrier
    }

    pub fn is_closed(&self) -> bool {
        self.inner.is_none()
    }

    fn wrong_role(&self, expected: Role) -> TransportError {
        TransportError::WrongRole {
            expected,
            actual: self.role,
        }
    }

    /// Delivers `env` to every current subscriber of this topic. Never
    /// blocks on subscribers; with none, the envelope is dropped.
    pub fn publish(&mut self, env: &MessageEnvelope) -> Result<()> {
        if env.topic() != &self.topic {
            return Err(TransportError::TopicMismatch {
                expected: self.topic.to_string(),
                actual: env.topic().to_string(),
            });
        }
        match self.inner.as_mut() {
            None => Err(TransportError::ClosedEndpoint),
            Some(Inner::Publisher(p)) => p.publish(env),
            Some(_) => Err(self.wrong_role(Role::Publisher)),
        }
    }

    /// Takes the oldest buffered envelope.
    ///
    /// Without `should_wait` this returns immediately. With it, the call
    /// blocks until an envelope arrives, or fails with
    /// [`TransportError::TimedOut`] once `timeout` elapses.
    pub fn try_receive(
        &mut self,
        should_wait: bool,
        timeout: Option<Duration>,
    ) -> Result<Option<MessageEnvelope>> {
        let wait = match (should_wait, timeout) {
            (false, _) => Wait::Immediate,
            (true, None) => Wait::Forever,
            (true, Some(t)) => Wait::Until(Instant::now() + t),
        };
        let role = self.role;
        match self.inner.as_mut() {
            None => Err(TransportError::ClosedEndpoint),
            Some(Inner::Subscriber(s)) => match s.receive(wait)? {
                None if should_wait => Err(TransportError::TimedOut),
                other => Ok(other),
            },
            Some(_) => Err(TransportError::WrongRole {
                expected: Role::Subscriber,
                actual: role,
            }),
        }
    }

    pub fn subscriber_stats(&self) -> Result<QueueStats> {
        match self.inner.as_ref() {
            None => Err(TransportError::ClosedEndpoint),
            Some(Inner::Subscriber(s)) => Ok(s.stats()),
            Some(_) => Err(self.wrong_role(Role::Subscriber)),
        }
    }

    /// Sends `env` and blocks for the paired reply. Error replies surface as
    /// [`TransportError::RemoteFailure`].
    pub fn request(&mut self, env: &MessageEnvelope, timeout: Option<Duration>) -> Result<MessageEnvelope> {
        let role = self.role;
        let reply = match self.inner.as_mut() {
            None => return Err(TransportError::ClosedEndpoint),
            Some(Inner::Requester(r)) => r.request(env, timeout)?,
            Some(_) => {
                return Err(TransportError::WrongRole {
                    expected: Role::Requester,
                    actual: role,
                })
            }
        };
        match reply.header().error_message() {
            Some(msg) => Err(TransportError::RemoteFailure(msg.to_string())),
            None => Ok(reply),
        }
    }

    /// Waits for the next request on a replier.
    pub fn next_request(&mut self, wait: Wait) -> Result<Option<IncomingRequest>> {
        let role = self.role;
        match self.inner.as_mut() {
            None => Err(TransportError::ClosedEndpoint),
            Some(Inner::Replier(r)) => r.next_request(wait),
            Some(_) => Err(TransportError::WrongRole {
                expected: Role::Replier,
                actual: role,
            }),
        }
    }

    /// Answers requests one at a time until `stop` is raised. A handler
    /// error becomes an error reply rather than leaving the requester
    /// hanging.
    pub fn serve<F>(&mut self, mut handler: F, stop: &StopSignal) -> Result<()>
    where
        F: FnMut(MessageEnvelope) -> Result<MessageEnvelope, HandlerError>,
    {
        const POLL: Duration = Duration::from_millis(20);
        while !stop.is_raised() {
            let Some(req) = self.next_request(Wait::Until(Instant::now() + POLL))? else {
                continue;
            };
            match handler(req.envelope().clone()) {
                Ok(reply) => req.respond(reply),
                Err(e) => req.fail(&e.to_string()),
            }
        }
        Ok(())
    }

    pub fn close(&mut self) {
        match self.inner.take() {
            Some(Inner::Publisher(mut p)) => p.close(),
            Some(Inner::Subscriber(mut s)) => s.close(),
            Some(Inner::Requester(mut r)) => r.close(),
            Some(Inner::Replier(mut r)) => r.close(),
            None => {}
        }
    }
}

impl Drop for EndpointHandle {
    fn drop(&mut self) {
        self.close();
    }
}

/// Process-wide transport settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub broker: BrokerAddrs,
    pub registry_path: PathBuf,
    /// Report tcp as available even without a reachable broker (direct
    /// req/rep only).
    pub tcp_direct: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            broker: BrokerAddrs::default(),
            registry_path: PathBuf::from(DEFAULT_REGISTRY_PATH),
            tcp_direct: false,
        }
    }
}

impl RuntimeConfig {
    /// Defaults overridden by `WRAPIFY_BROKER` and `WRAPIFY_REGISTRY`.
    pub fn from_env() -> Result<Self> {
        let mut cfg = RuntimeConfig::default();
        if let Ok(addr) = std::env::var(ENV_BROKER) {
            cfg.broker = BrokerAddrs::from_subscriber_side(&addr)?;
        }
        if let Ok(path) = std::env::var(ENV_REGISTRY) {
            cfg.registry_path = path.into();
        }
        Ok(cfg)
    }
}

struct Adapter {
    transport: Arc<dyn Transport>,
    disabled: bool,
}

struct RuntimeShared {
    config: RuntimeConfig,
    adapters: RwLock<Vec<(String, Adapter)>>,
    closed: AtomicBool,
}

/// Registry of transport adapters, shared by everything in one process.
///
/// Cloning is cheap and yields a handle to the same runtime; threads that
/// share a runtime share its in-process bus.
#[derive(Clone)]
pub struct Runtime {
    shared: Arc<RuntimeShared>,
}

impl fmt::Debug for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Runtime")
            .field("config", &self.shared.config)
            .field("adapters", &self.adapter_names())
            .finish()
    }
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime::new(RuntimeConfig::default())
    }
}

impl Runtime {
    pub fn new(config: RuntimeConfig) -> Self {
        let mut adapters: Vec<(String, Adapter)> = Vec::new();
        let mut add = |t: Arc<dyn Transport>| {
            adapters.push((
                t.name().to_string(),
                Adapter {
                    transport: t,
                    disabled: false,
                },
            ))
        };
        add(Arc::new(InprocTransport::new()));
        add(Arc::new(TcpTransport::new(
            config.broker.clone(),
            config.registry_path.clone(),
            config.tcp_direct,
        )));
        add(Arc::new(UnsupportedTransport::new("mcast")));
        for slot in MIDDLEWARE_SLOTS {
            add(Arc::new(UnsupportedTransport::new(slot)));
        }
        Runtime {
            shared: Arc::new(RuntimeShared {
                config,
                adapters: RwLock::new(adapters),
                closed: AtomicBool::new(false),
            }),
        }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.shared.config
    }

    pub fn adapter_names(&self) -> Vec<String> {
        self.shared.adapters.read().iter().map(|(n, _)| n.clone()).collect()
    }

    /// Adds an adapter, replacing any existing one with the same name.
    pub fn register_transport(&self, transport: Arc<dyn Transport>) {
        let name = transport.name().to_string();
        let mut adapters = self.shared.adapters.write();
        let adapter = Adapter {
            transport,
            disabled: false,
        };
        match adapters.iter_mut().find(|(n, _)| *n == name) {
            Some((_, slot)) => *slot = adapter,
            None => adapters.push((name, adapter)),
        }
    }

    /// Binds `name` (e.g. a middleware slot such as `ros`) to an existing
    /// adapter. Both names then share the backing transport's state.
    pub fn bind_slot(&self, name: &str, backing: &Carrier) -> Result<()> {
        let transport = self
            .adapter(backing.name())
            .ok_or_else(|| TransportError::UnsupportedCarrier(backing.name().to_string()))?;
        self.register_transport(Arc::new(AliasTransport {
            name: name.to_string(),
            inner: transport,
        }));
        Ok(())
    }

    /// Marks an adapter as (un)available in this process without removing it.
    pub fn set_available(&self, name: &str, available: bool) -> bool {
        let mut adapters = self.shared.adapters.write();
        match adapters.iter_mut().find(|(n, _)| n == name) {
            Some((_, a)) => {
                a.disabled = !available;
                true
            }
            None => false,
        }
    }

    fn adapter(&self, name: &str) -> Option<Arc<dyn Transport>> {
        self.shared
            .adapters
            .read()
            .iter()
            .find(|(n, a)| n == name && !a.disabled)
            .map(|(_, a)| a.transport.clone())
    }

    /// Cheap check: the adapter exists, is enabled, and declares itself
    /// usable. Does not probe the network.
    pub fn is_usable(&self, carrier: &Carrier) -> bool {
        if self.is_closed() || *carrier == Carrier::Mcast {
            return false;
        }
        self.adapter(carrier.name()).is_some_and(|t| {
            let cap = t.capability();
            cap.supports_pubsub || cap.supports_reqrep
        })
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::SeqCst)
    }

    /// Marks the runtime closed; no further endpoints can be opened.
    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
    }

    pub fn list_transports(&self) -> Vec<TransportCapability> {
        let closed = self.is_closed();
        self.shared
            .adapters
            .read()
            .iter()
            .map(|(name, a)| {
                let mut cap = a.transport.capability();
                cap.carrier = Carrier::from(name.as_str());
                cap.available &= !closed && !a.disabled;
                cap
            })
            .collect()
    }

    fn route(&self, carrier: &Carrier, reqrep: bool) -> Result<Arc<dyn Transport>> {
        if self.is_closed() {
            return Err(TransportError::RuntimeClosed);
        }
        let unsupported = || TransportError::UnsupportedCarrier(carrier.name().to_string());
        let transport = self.adapter(carrier.name()).ok_or_else(unsupported)?;
        let cap = transport.capability();
        let supported = if reqrep {
            cap.supports_reqrep
        } else {
            cap.supports_pubsub
        };
        if !supported {
            return Err(unsupported());
        }
        Ok(transport)
    }

    pub fn open_publisher(&self, topic: &Topic, carrier: &Carrier, opts: &EndpointOptions) -> Result<EndpointHandle> {
        let inner = self.route(carrier, false)?.open_publisher(topic, opts)?;
        Ok(EndpointHandle::new(topic, carrier, Inner::Publisher(inner)))
    }

    pub fn open_subscriber(&self, topic: &Topic, carrier: &Carrier, opts: &EndpointOptions) -> Result<EndpointHandle> {
        let inner = self.route(carrier, false)?.open_subscriber(topic, opts)?;
        Ok(EndpointHandle::new(topic, carrier, Inner::Subscriber(inner)))
    }

    pub fn open_requester(&self, topic: &Topic, carrier: &Carrier, opts: &EndpointOptions) -> Result<EndpointHandle> {
        let inner = self.route(carrier, true)?.open_requester(topic, opts)?;
        Ok(EndpointHandle::new(topic, carrier, Inner::Requester(inner)))
    }

    pub fn open_replier(&self, topic: &Topic, carrier: &Carrier, opts: &EndpointOptions) -> Result<EndpointHandle> {
        let inner = self.route(carrier, true)?.open_replier(topic, opts)?;
        Ok(EndpointHandle::new(topic, carrier, Inner::Replier(inner)))
    }
}

/// Placeholder for a carrier that is named but has no implementation.
pub struct UnsupportedTransport {
    name: String,
}

impl UnsupportedTransport {
    pub fn new(name: impl Into<String>) -> Self {
        UnsupportedTransport { name: name.into() }
    }

    fn err<T>(&self) -> Result<T> {
        Err(TransportError::UnsupportedCarrier(self.name.clone()))
    }
}

impl Transport for UnsupportedTransport {
    fn name(&self) -> &str {
        &self.name
    }

    fn capability(&self) -> TransportCapability {
        TransportCapability {
            carrier: Carrier::from(self.name.as_str()),
            supports_pubsub: false,
            supports_reqrep: false,
            available: false,
        }
    }

    fn open_publisher(&self, _: &Topic, _: &EndpointOptions) -> Result<Box<dyn PublisherEndpoint>> {
        self.err()
    }

    fn open_subscriber(&self, _: &Topic, _: &EndpointOptions) -> Result<Box<dyn SubscriberEndpoint>> {
        self.err()
    }

    fn open_requester(&self, _: &Topic, _: &EndpointOptions) -> Result<Box<dyn RequesterEndpoint>> {
        self.err()
    }

    fn open_replier(&self, _: &Topic, _: &EndpointOptions) -> Result<Box<dyn ReplierEndpoint>> {
        self.err()
    }
}

struct AliasTransport {
    name: String,
    inner: Arc<dyn Transport>,
}

impl Transport for AliasTransport {
    fn name(&self) -> &str {
        &self.name
    }

    fn capability(&self) -> TransportCapability {
        self.inner.capability()
    }

    fn open_publisher(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn PublisherEndpoint>> {
        self.inner.open_publisher(topic, opts)
    }

    fn open_subscriber(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn SubscriberEndpoint>> {
        self.inner.open_subscriber(topic, opts)
    }

    fn open_requester(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn RequesterEndpoint>> {
        self.inner.open_requester(topic, opts)
    }

    fn open_replier(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn ReplierEndpoint>> {
        self.inner.open_replier(topic, opts)
    }
}
