//! Relays envelopes from one topic/carrier to another.

use std::time::Duration;

use serde_json::Value;

use super::{EndpointHandle, EndpointOptions, Result, Runtime, StopSignal, TransportError};
use crate::codec::{MessageEnvelope, FWD_HOPS_META_KEY};
use crate::topic::{Carrier, Topic};

const BRIDGE_QUEUE: usize = 1024;
const POLL: Duration = Duration::from_millis(20);

/// Retargets `env` at `to` and counts one more forwarding hop in its meta.
pub fn forward_envelope(env: MessageEnvelope, to: &Topic) -> MessageEnvelope {
    let hops = env.header().fwd_hops() + 1;
    env.with_topic(to.clone())
        .with_meta(FWD_HOPS_META_KEY, Value::from(hops))
}

/// A subscriber on one side feeding a publisher on the other.
pub struct Bridge {
    source: EndpointHandle,
    sink: EndpointHandle,
    forwarded: u64,
}

impl Bridge {
    pub fn open(
        runtime: &Runtime,
        from: (&Topic, &Carrier),
        to: (&Topic, &Carrier),
        opts: &EndpointOptions,
    ) -> Result<Self> {
        let sub_opts = opts.clone().with_queue_size(opts.queue_size.max(BRIDGE_QUEUE));
        let source = runtime.open_subscriber(from.0, from.1, &sub_opts)?;
        let sink = runtime.open_publisher(to.0, to.1, opts)?;
        Ok(Bridge {
            source,
            sink,
            forwarded: 0,
        })
    }

    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }

    /// Forwards at most one envelope, waiting up to `timeout`. Returns
    /// whether one was forwarded.
    pub fn forward_one(&mut self, timeout: Duration) -> Result<bool> {
        let env = match self.source.try_receive(true, Some(timeout)) {
            Ok(Some(env)) => env,
            Ok(None) | Err(TransportError::TimedOut) => return Ok(false),
            Err(e) => return Err(e),
        };
        let topic = self.sink.topic().clone();
        self.sink.publish(&forward_envelope(env, &topic))?;
        self.forwarded += 1;
        Ok(true)
    }

    /// Forwards until `stop` is raised.
    pub fn run(&mut self, stop: &StopSignal) -> Result<()> {
        while !stop.is_raised() {
            self.forward_one(POLL)?;
        }
        Ok(())
    }

    pub fn close(&mut self) {
        self.source.close();
        self.sink.close();
    }
}
