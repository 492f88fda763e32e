//! TCP transport.
//!
//! Publish/subscribe goes through a [`Broker`]: publishers connect to its
//! publisher side, subscribers to its subscriber side. Request/reply uses
//! direct sockets; a replier listens on its own port and requesters find it
//! through explicit options or the [`NameRegistry`] file.

mod broker;
mod frame;
mod names;

use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use bytes::Bytes;
use crossbeam_channel::{Receiver, Sender};
use log::debug;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use broker::{Broker, BrokerHandle};
pub use frame::{encode_frame, read_frame, write_frame, MAX_PARTS, MAX_PART_LEN};
pub use names::NameRegistry;

use super::queue::{BoundedQueue, QueueStats, Wait};
use super::{
    error_reply, EndpointOptions, IncomingRequest, PublisherEndpoint, ReplierEndpoint,
    RequesterEndpoint, Result, SubscriberEndpoint, Transport, TransportCapability, TransportError,
};
use crate::codec::MessageEnvelope;
use crate::topic::{Carrier, Topic};

const HELLO_REQ: &[u8] = b"REQ";
const ACK_WAIT: Duration = Duration::from_secs(2);
const PROBE_TIMEOUT: Duration = Duration::from_millis(200);
const PROBE_CACHE: Duration = Duration::from_secs(1);
const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// Where the broker listens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerAddrs {
    /// Subscribers connect here.
    pub subscriber_addr: String,
    /// Publishers connect here.
    pub publisher_addr: String,
}

impl Default for BrokerAddrs {
    fn default() -> Self {
        BrokerAddrs {
            subscriber_addr: "127.0.0.1:5555".into(),
            publisher_addr: "127.0.0.1:5556".into(),
        }
    }
}

impl BrokerAddrs {
    /// Builds both addresses from the subscriber side; the publisher side is
    /// the next port on the same host.
    pub fn from_subscriber_side(addr: &str) -> Result<Self> {
        let bad = || TransportError::Protocol(format!("invalid broker address {addr:?}"));
        let (host, port) = addr.rsplit_once(':').ok_or_else(bad)?;
        let port: u16 = port.parse().map_err(|_| bad())?;
        if host.is_empty() {
            return Err(bad());
        }
        let next = port.checked_add(1).ok_or_else(bad)?;
        Ok(BrokerAddrs {
            subscriber_addr: addr.to_string(),
            publisher_addr: format!("{host}:{next}"),
        })
    }
}

fn connect(addr: &str, timeout: Duration) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::InvalidInput, "address resolved to nothing");
    for sa in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&sa, timeout) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn broker_unreachable(addr: &str, err: impl ToString) -> TransportError {
    TransportError::BrokerUnreachable {
        addr: addr.to_string(),
        reason: err.to_string(),
    }
}

pub struct TcpTransport {
    broker: BrokerAddrs,
    registry: PathBuf,
    direct: bool,
    probe: Mutex<Option<(Instant, bool)>>,
}

impl TcpTransport {
    /// With `direct`, the transport reports itself available even when no
    /// broker answers, since req/rep does not need one.
    pub fn new(broker: BrokerAddrs, registry: PathBuf, direct: bool) -> Self {
        TcpTransport {
            broker,
            registry,
            direct,
            probe: Mutex::new(None),
        }
    }

    fn broker_for<'a>(&'a self, opts: &'a EndpointOptions) -> &'a BrokerAddrs {
        opts.broker.as_ref().unwrap_or(&self.broker)
    }

    fn registry_for(&self, opts: &EndpointOptions) -> NameRegistry {
        NameRegistry::new(opts.registry_path.clone().unwrap_or_else(|| self.registry.clone()))
    }

    fn broker_reachable(&self) -> bool {
        let mut cached = self.probe.lock();
        if let Some((at, ok)) = *cached {
            if at.elapsed() < PROBE_CACHE {
                return ok;
            }
        }
        let ok = connect(&self.broker.subscriber_addr, PROBE_TIMEOUT).is_ok();
        *cached = Some((Instant::now(), ok));
        ok
    }
}

impl Transport for TcpTransport {
    fn name(&self) -> &str {
        "tcp"
    }

    fn capability(&self) -> TransportCapability {
        TransportCapability {
            carrier: Carrier::Tcp,
            supports_pubsub: true,
            supports_reqrep: true,
            available: self.direct || self.broker_reachable(),
        }
    }

    fn open_publisher(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn PublisherEndpoint>> {
        let addr = &self.broker_for(opts).publisher_addr;
        let mut stream = connect(addr, opts.connect_timeout).map_err(|e| broker_unreachable(addr, e))?;
        write_frame(&mut stream, &[broker::HELLO_PUB, topic.as_str().as_bytes()])
            .map_err(|e| broker_unreachable(addr, e))?;
        Ok(Box::new(TcpPublisher { stream: Some(stream) }))
    }

    fn open_subscriber(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn SubscriberEndpoint>> {
        let addr = &self.broker_for(opts).subscriber_addr;
        let mut stream = connect(addr, opts.connect_timeout).map_err(|e| broker_unreachable(addr, e))?;
        write_frame(&mut stream, &[broker::HELLO_SUB, topic.as_str().as_bytes()])
            .map_err(|e| broker_unreachable(addr, e))?;
        // wait until the broker has registered us so nothing published after
        // this call returns can be missed
        stream.set_read_timeout(Some(ACK_WAIT))?;
        match read_frame(&mut stream) {
            Ok(Some(parts)) if parts.len() == 1 && parts[0].as_ref() == broker::ACK => {}
            Ok(_) => return Err(TransportError::Protocol("broker did not acknowledge subscription".into())),
            Err(e) => return Err(broker_unreachable(addr, e)),
        }
        stream.set_read_timeout(None)?;

        let queue = Arc::new(BoundedQueue::new(opts.queue_size));
        let reader_queue = queue.clone();
        let mut reader = stream.try_clone()?;
        let expected = topic.clone();
        let thread = thread::spawn(move || {
            while let Ok(Some(parts)) = read_frame(&mut reader) {
                match MessageEnvelope::from_parts(parts) {
                    Ok(env) if env.topic() == &expected => {
                        reader_queue.push(env);
                    }
                    Ok(env) => debug!("dropping envelope for {} on {expected}", env.topic()),
                    Err(e) => debug!("dropping malformed envelope on {expected}: {e}"),
                }
            }
            reader_queue.close();
        });
        Ok(Box::new(TcpSubscriber {
            stream,
            queue,
            thread: Some(thread),
        }))
    }

    fn open_requester(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn RequesterEndpoint>> {
        Ok(Box::new(TcpRequester {
            topic: topic.clone(),
            address: opts.address.clone(),
            registry: self.registry_for(opts),
            connect_timeout: opts.connect_timeout,
            stream: None,
        }))
    }

    fn open_replier(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn ReplierEndpoint>> {
        TcpReplier::bind(topic, opts, self.registry_for(opts)).map(|r| Box::new(r) as _)
    }
}

struct TcpPublisher {
    stream: Option<TcpStream>,
}

impl PublisherEndpoint for TcpPublisher {
    fn publish(&mut self, env: &MessageEnvelope) -> Result<()> {
        let stream = self.stream.as_mut().ok_or(TransportError::ClosedEndpoint)?;
        write_frame(stream, &env.to_parts())?;
        Ok(())
    }

    fn close(&mut self) {
        if let Some(s) = self.stream.take() {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

struct TcpSubscriber {
    stream: TcpStream,
    queue: Arc<BoundedQueue<MessageEnvelope>>,
    thread: Option<JoinHandle<()>>,
}

impl SubscriberEndpoint for TcpSubscriber {
    fn receive(&mut self, wait: Wait) -> Result<Option<MessageEnvelope>> {
        Ok(self.queue.pop(wait))
    }

    fn stats(&self) -> QueueStats {
        self.queue.stats()
    }

    fn close(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        self.queue.close();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpSubscriber {
    fn drop(&mut self) {
        self.close();
    }
}

struct TcpRequester {
    topic: Topic,
    address: Option<String>,
    registry: NameRegistry,
    connect_timeout: Duration,
    stream: Option<TcpStream>,
}

impl TcpRequester {
    fn unreachable(&self, detail: impl std::fmt::Display) -> TransportError {
        TransportError::PeerUnreachable(format!("tcp:{} ({detail})", self.topic))
    }

    fn connection(&mut self) -> Result<&mut TcpStream> {
        if self.stream.is_none() {
            let addr = match &self.address {
                Some(a) => a.clone(),
                None => self
                    .registry
                    .lookup(&self.topic)?
                    .ok_or_else(|| self.unreachable("no registry entry"))?,
            };
            let mut stream = connect(&addr, self.connect_timeout).map_err(|e| self.unreachable(format!("{addr}: {e}")))?;
            write_frame(&mut stream, &[HELLO_REQ, self.topic.as_str().as_bytes()])
                .map_err(|e| self.unreachable(e))?;
            self.stream = Some(stream);
        }
        Ok(self.stream.as_mut().expect("connected above"))
    }
}

impl RequesterEndpoint for TcpRequester {
    fn request(&mut self, env: &MessageEnvelope, timeout: Option<Duration>) -> Result<MessageEnvelope> {
        let stream = self.connection()?;
        let outcome = stream
            .set_read_timeout(timeout.map(|t| t.max(Duration::from_millis(1))))
            .and_then(|_| write_frame(stream, &env.to_parts()))
            .and_then(|_| read_frame(stream));
        match outcome {
            Ok(Some(parts)) => Ok(MessageEnvelope::from_parts(parts)?),
            Ok(None) => {
                self.stream = None;
                Err(self.unreachable("connection closed"))
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                // the reply may still arrive later; a fresh connection keeps it
                // from being mistaken for the answer to the next request
                self.stream = None;
                Err(TransportError::TimedOut)
            }
            Err(e) => {
                self.stream = None;
                Err(self.unreachable(e))
            }
        }
    }

    fn close(&mut self) {
        if let Some(s) = self.stream.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

#[derive(Default)]
struct ReplierShared {
    stop: AtomicBool,
    next_id: AtomicU64,
    connections: Mutex<Vec<(u64, TcpStream)>>,
}

struct TcpReplier {
    topic: Topic,
    local: SocketAddr,
    registered: Option<NameRegistry>,
    shared: Arc<ReplierShared>,
    rx: Receiver<IncomingRequest>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpReplier {
    fn bind(topic: &Topic, opts: &EndpointOptions, registry: NameRegistry) -> Result<Self> {
        let listener = match &opts.address {
            Some(addr) => TcpListener::bind(addr).map_err(|e| TransportError::from_bind(addr, e))?,
            None => {
                if let Some(existing) = registry.lookup(topic)? {
                    if connect(&existing, PROBE_TIMEOUT).is_ok() {
                        return Err(TransportError::AddressInUse(format!("{existing} (serving {topic})")));
                    }
                }
                TcpListener::bind("127.0.0.1:0")?
            }
        };
        let local = listener.local_addr()?;
        let registered = if opts.address.is_none() {
            registry.register(topic, &local.to_string())?;
            Some(registry)
        } else {
            None
        };

        listener.set_nonblocking(true)?;
        let shared = Arc::new(ReplierShared::default());
        let (tx, rx) = crossbeam_channel::unbounded();
        let acceptor = {
            let shared = shared.clone();
            let topic = topic.clone();
            thread::spawn(move || accept_loop(listener, topic, tx, shared))
        };
        Ok(TcpReplier {
            topic: topic.clone(),
            local,
            registered,
            shared,
            rx,
            acceptor: Some(acceptor),
        })
    }
}

fn accept_loop(listener: TcpListener, topic: Topic, tx: Sender<IncomingRequest>, shared: Arc<ReplierShared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let Ok(clone) = stream.try_clone() else { continue };
                let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
                shared.connections.lock().push((id, clone));
                let (tx, shared, topic) = (tx.clone(), shared.clone(), topic.clone());
                thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, &topic, &tx) {
                        debug!("replier connection on {topic} ended: {e}");
                    }
                    shared.connections.lock().retain(|(cid, _)| *cid != id);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                debug!("replier accept on {topic} failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve_connection(mut stream: TcpStream, topic: &Topic, tx: &Sender<IncomingRequest>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let hello = read_frame(&mut stream)?.unwrap_or_default();
    match hello.as_slice() {
        [kind, t] if kind.as_ref() == HELLO_REQ && t.as_ref() == topic.as_str().as_bytes() => {}
        _ => return Err(io::Error::new(io::ErrorKind::InvalidData, "bad request hello")),
    }
    while let Some(parts) = read_frame(&mut stream)? {
        let reply = match MessageEnvelope::from_parts(parts) {
            Ok(env) => {
                let (reply_tx, reply_rx) = crossbeam_channel::bounded(1);
                let req = IncomingRequest::new(env, move |reply| {
                    let _ = reply_tx.send(reply);
                });
                if tx.send(req).is_err() {
                    return Ok(());
                }
                match reply_rx.recv() {
                    Ok(reply) => reply,
                    // replier closed with this request pending
                    Err(_) => return Ok(()),
                }
            }
            Err(e) => error_reply(topic, &e.to_string()),
        };
        write_parts(&mut stream, &reply.to_parts())?;
    }
    Ok(())
}

fn write_parts(stream: &mut TcpStream, parts: &[Bytes]) -> io::Result<()> {
    stream.write_all(&encode_frame(parts))?;
    stream.flush()
}

impl ReplierEndpoint for TcpReplier {
    fn next_request(&mut self, wait: Wait) -> Result<Option<IncomingRequest>> {
        Ok(match wait {
            Wait::Immediate => self.rx.try_recv().ok(),
            Wait::Until(deadline) => self
                .rx
                .recv_timeout(deadline.saturating_duration_since(Instant::now()))
                .ok(),
            Wait::Forever => self.rx.recv().ok(),
        })
    }

    fn close(&mut self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
        for (_, s) in self.shared.connections.lock().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        while self.rx.try_recv().is_ok() {}
        if let Some(reg) = self.registered.take() {
            if let Err(e) = reg.unregister(&self.topic, &self.local.to_string()) {
                debug!("could not unregister {}: {e}", self.topic);
            }
        }
    }
}

impl Drop for TcpReplier {
    fn drop(&mut self) {
        self.close();
    }
}
