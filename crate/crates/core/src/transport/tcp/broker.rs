//! Fan-in/fan-out relay for tcp publish/subscribe.
//!
//! Publishers connect to the publisher side and announce themselves with
//! `["PUB", topic]`; subscribers connect to the subscriber side with
//! `["SUB", topic]` and receive `["OK"]` once registered. Every message frame
//! a publisher sends is routed by its first part (the topic) to all
//! subscribers of exactly that topic.

use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use bytes::Bytes;
use log::{debug, warn};
use parking_lot::Mutex;

use super::frame::{encode_frame, read_frame};
use super::BrokerAddrs;
use crate::transport::queue::{BoundedQueue, Wait};
use crate::transport::{Result, StopSignal, TransportError};

pub(crate) const HELLO_SUB: &[u8] = b"SUB";
pub(crate) const HELLO_PUB: &[u8] = b"PUB";
pub(crate) const ACK: &[u8] = b"OK";

/// Frames buffered per subscriber connection before the oldest is dropped.
const SUBSCRIBER_BACKLOG: usize = 4096;
const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// Subscriber queues keyed by topic, each tagged with its connection id.
type SubscriberTable = HashMap<Bytes, Vec<(u64, Arc<BoundedQueue<Bytes>>)>>;

#[derive(Default)]
struct Shared {
    next_id: AtomicU64,
    subscribers: Mutex<SubscriberTable>,
    connections: Mutex<HashMap<u64, TcpStream>>,
}

impl Shared {
    fn track(&self, stream: &TcpStream) -> io::Result<u64> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.connections.lock().insert(id, stream.try_clone()?);
        Ok(id)
    }

    fn untrack(&self, id: u64) {
        if let Some(s) = self.connections.lock().remove(&id) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    fn route(&self, topic: &Bytes, frame: Bytes) {
        if let Some(subs) = self.subscribers.lock().get(topic) {
            for (_, q) in subs {
                q.push(frame.clone());
            }
        }
    }

    fn shutdown(&self) {
        for (_, s) in self.connections.lock().drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for (_, subs) in self.subscribers.lock().drain() {
            for (_, q) in subs {
                q.close();
            }
        }
    }
}

pub struct Broker {
    publisher_side: TcpListener,
    subscriber_side: TcpListener,
    addrs: BrokerAddrs,
}

impl Broker {
    /// Binds both sides. Port 0 picks free ports; see [`Broker::local_addrs`].
    pub fn bind(addrs: &BrokerAddrs) -> Result<Self> {
        let subscriber_side = TcpListener::bind(&addrs.subscriber_addr)
            .map_err(|e| TransportError::from_bind(&addrs.subscriber_addr, e))?;
        let publisher_side = TcpListener::bind(&addrs.publisher_addr)
            .map_err(|e| TransportError::from_bind(&addrs.publisher_addr, e))?;
        let local = BrokerAddrs {
            subscriber_addr: subscriber_side.local_addr()?.to_string(),
            publisher_addr: publisher_side.local_addr()?.to_string(),
        };
        Ok(Broker {
            publisher_side,
            subscriber_side,
            addrs: local,
        })
    }

    /// Binds both sides on free loopback ports.
    pub fn bind_ephemeral() -> Result<Self> {
        Self::bind(&BrokerAddrs {
            subscriber_addr: "127.0.0.1:0".into(),
            publisher_addr: "127.0.0.1:0".into(),
        })
    }

    pub fn local_addrs(&self) -> &BrokerAddrs {
        &self.addrs
    }

    /// Relays until `stop` is raised, then drops every connection.
    pub fn run(self, stop: &StopSignal) -> Result<()> {
        self.publisher_side.set_nonblocking(true)?;
        self.subscriber_side.set_nonblocking(true)?;
        let shared = Arc::new(Shared::default());
        while !stop.is_raised() {
            let mut idle = true;
            for listener in [&self.publisher_side, &self.subscriber_side] {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        idle = false;
                        debug!("broker: connection from {peer}");
                        let shared = shared.clone();
                        thread::spawn(move || {
                            if let Err(e) = handle_connection(stream, &shared) {
                                debug!("broker: connection from {peer} ended: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {}
                    Err(e) => warn!("broker: accept failed: {e}"),
                }
            }
            if idle {
                thread::sleep(ACCEPT_POLL);
            }
        }
        shared.shutdown();
        Ok(())
    }

    pub fn spawn(self) -> BrokerHandle {
        let stop = StopSignal::new();
        let addrs = self.addrs.clone();
        let thread_stop = stop.clone();
        let thread = thread::spawn(move || {
            if let Err(e) = self.run(&thread_stop) {
                warn!("broker stopped with error: {e}");
            }
        });
        BrokerHandle {
            addrs,
            stop,
            thread: Some(thread),
        }
    }
}

/// A broker running on a background thread; stopped on drop.
pub struct BrokerHandle {
    addrs: BrokerAddrs,
    stop: StopSignal,
    thread: Option<JoinHandle<()>>,
}

impl BrokerHandle {
    pub fn addrs(&self) -> &BrokerAddrs {
        &self.addrs
    }

    pub fn stop(&mut self) {
        self.stop.raise();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn handle_connection(mut stream: TcpStream, shared: &Arc<Shared>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let hello = read_frame(&mut stream)?.unwrap_or_default();
    stream.set_read_timeout(None)?;
    let id = shared.track(&stream)?;
    let result = match hello.as_slice() {
        [kind, topic] if kind.as_ref() == HELLO_SUB => serve_subscriber(stream, topic.clone(), id, shared),
        [kind, _topic] if kind.as_ref() == HELLO_PUB => serve_publisher(stream, shared),
        _ => Err(io::Error::new(io::ErrorKind::InvalidData, "bad hello frame")),
    };
    shared.untrack(id);
    result
}

fn serve_publisher(mut stream: TcpStream, shared: &Shared) -> io::Result<()> {
    while let Some(parts) = read_frame(&mut stream)? {
        let Some(topic) = parts.first().cloned() else {
            continue;
        };
        shared.route(&topic, Bytes::from(encode_frame(&parts)));
    }
    Ok(())
}

fn serve_subscriber(mut stream: TcpStream, topic: Bytes, id: u64, shared: &Arc<Shared>) -> io::Result<()> {
    let queue = Arc::new(BoundedQueue::new(SUBSCRIBER_BACKLOG));
    queue.push(Bytes::from(encode_frame(&[ACK])));
    shared
        .subscribers
        .lock()
        .entry(topic.clone())
        .or_default()
        .push((id, queue.clone()));

    let mut writer = stream.try_clone()?;
    let writer_queue = queue.clone();
    let writer_thread = thread::spawn(move || {
        use std::io::Write;
        while let Some(frame) = writer_queue.pop(Wait::Forever) {
            if writer.write_all(&frame).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });

    // subscribers send nothing after the hello; reading detects disconnects
    let result = loop {
        match read_frame(&mut stream) {
            Ok(Some(_)) => continue,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        }
    };

    {
        let mut subs = shared.subscribers.lock();
        if let Some(list) = subs.get_mut(&topic) {
            list.retain(|(sid, _)| *sid != id);
            if list.is_empty() {
                subs.remove(&topic);
            }
        }
    }
    queue.close();
    let _ = writer_thread.join();
    result
}
