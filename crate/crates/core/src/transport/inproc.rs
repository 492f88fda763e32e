//! In-process bus shared by every endpoint opened through one runtime.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;

use super::queue::{BoundedQueue, QueueStats, Wait};
use super::{
    EndpointOptions, IncomingRequest, PublisherEndpoint, ReplierEndpoint, RequesterEndpoint,
    Result, SubscriberEndpoint, Transport, TransportCapability, TransportError,
};
use crate::codec::MessageEnvelope;
use crate::topic::{Carrier, Topic};

type SubQueue = Arc<BoundedQueue<MessageEnvelope>>;

#[derive(Default)]
struct Bus {
    subscribers: Mutex<HashMap<Topic, Vec<SubQueue>>>,
    repliers: Mutex<HashMap<Topic, Sender<IncomingRequest>>>,
}

#[derive(Default)]
pub struct InprocTransport {
    bus: Arc<Bus>,
}

impl InprocTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for InprocTransport {
    fn name(&self) -> &str {
        "inproc"
    }

    fn capability(&self) -> TransportCapability {
        TransportCapability {
            carrier: Carrier::Inproc,
            supports_pubsub: true,
            supports_reqrep: true,
            available: true,
        }
    }

    fn open_publisher(&self, topic: &Topic, _opts: &EndpointOptions) -> Result<Box<dyn PublisherEndpoint>> {
        Ok(Box::new(InprocPublisher {
            bus: self.bus.clone(),
            topic: topic.clone(),
        }))
    }

    fn open_subscriber(&self, topic: &Topic, opts: &EndpointOptions) -> Result<Box<dyn SubscriberEndpoint>> {
        let queue = Arc::new(BoundedQueue::new(opts.queue_size));
        self.bus
            .subscribers
            .lock()
            .entry(topic.clone())
            .or_default()
            .push(queue.clone());
        Ok(Box::new(InprocSubscriber {
            bus: self.bus.clone(),
            topic: topic.clone(),
            queue,
        }))
    }

    fn open_requester(&self, topic: &Topic, _opts: &EndpointOptions) -> Result<Box<dyn RequesterEndpoint>> {
        Ok(Box::new(InprocRequester {
            bus: self.bus.clone(),
            topic: topic.clone(),
        }))
    }

    fn open_replier(&self, topic: &Topic, _opts: &EndpointOptions) -> Result<Box<dyn ReplierEndpoint>> {
        let mut repliers = self.bus.repliers.lock();
        if repliers.contains_key(topic) {
            return Err(TransportError::AddressInUse(format!("inproc:{topic}")));
        }
        let (tx, rx) = crossbeam_channel::unbounded();
        repliers.insert(topic.clone(), tx.clone());
        Ok(Box::new(InprocReplier {
            bus: self.bus.clone(),
            topic: topic.clone(),
            tx,
            rx,
        }))
    }
}

struct InprocPublisher {
    bus: Arc<Bus>,
    topic: Topic,
}

impl PublisherEndpoint for InprocPublisher {
    fn publish(&mut self, env: &MessageEnvelope) -> Result<()> {
        let subs = self.bus.subscribers.lock();
        if let Some(queues) = subs.get(&self.topic) {
            for q in queues {
                q.push(env.clone());
            }
        }
        Ok(())
    }
}

struct InprocSubscriber {
    bus: Arc<Bus>,
    topic: Topic,
    queue: SubQueue,
}

impl SubscriberEndpoint for InprocSubscriber {
    fn receive(&mut self, wait: Wait) -> Result<Option<MessageEnvelope>> {
        Ok(self.queue.pop(wait))
    }

    fn stats(&self) -> QueueStats {
        self.queue.stats()
    }

    fn close(&mut self) {
        self.queue.close();
        let mut subs = self.bus.subscribers.lock();
        if let Some(list) = subs.get_mut(&self.topic) {
            list.retain(|q| !Arc::ptr_eq(q, &self.queue));
            if list.is_empty() {
                subs.remove(&self.topic);
            }
        }
    }
}

impl Drop for InprocSubscriber {
    fn drop(&mut self) {
        self.close();
    }
}

struct InprocRequester {
    bus: Arc<Bus>,
    topic: Topic,
}

impl RequesterEndpoint for InprocRequester {
    fn request(&mut self, env: &MessageEnvelope, timeout: Option<Duration>) -> Result<MessageEnvelope> {
        let unreachable = || TransportError::PeerUnreachable(format!("inproc:{}", self.topic));
        let tx = self
            .bus
            .repliers
            .lock()
            .get(&self.topic)
            .cloned()
            .ok_or_else(unreachable)?;
        let (reply_tx, reply_rx) = crossbeam_channel::bounded(1);
        let req = IncomingRequest::new(env.clone(), move |reply| {
            let _ = reply_tx.send(reply);
        });
        tx.send(req).map_err(|_| unreachable())?;
        match timeout {
            Some(t) => match reply_rx.recv_timeout(t) {
                Ok(reply) => Ok(reply),
                Err(RecvTimeoutError::Timeout) => Err(TransportError::TimedOut),
                Err(RecvTimeoutError::Disconnected) => Err(unreachable()),
            },
            None => reply_rx.recv().map_err(|_| unreachable()),
        }
    }
}

struct InprocReplier {
    bus: Arc<Bus>,
    topic: Topic,
    tx: Sender<IncomingRequest>,
    rx: Receiver<IncomingRequest>,
}

impl ReplierEndpoint for InprocReplier {
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
        let mut repliers = self.bus.repliers.lock();
        if repliers
            .get(&self.topic)
            .is_some_and(|tx| tx.same_channel(&self.tx))
        {
            repliers.remove(&self.topic);
        }
        drop(repliers);
        // pending requests are dropped, which disconnects their reply channels
        while self.rx.try_recv().is_ok() {}
    }
}

impl Drop for InprocReplier {
    fn drop(&mut self) {
        self.close();
    }
}
