use std::collections::VecDeque;
use std::time::Instant;

use parking_lot::{Condvar, Mutex};

/// How long a receive may block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wait {
    Immediate,
    Until(Instant),
    Forever,
}

/// Receive-side counters of a subscriber.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    /// Items ever pushed into the queue.
    pub received: u64,
    /// Items evicted because the queue was full.
    pub dropped: u64,
    /// Items currently buffered.
    pub buffered: usize,
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    received: u64,
    dropped: u64,
}

/// Bounded FIFO that evicts the oldest item when full.
pub(crate) struct BoundedQueue<T> {
    capacity: usize,
    state: Mutex<State<T>>,
    ready: Condvar,
}

impl<T> BoundedQueue<T> {
    pub(crate) fn new(capacity: usize) -> Self {
        BoundedQueue {
            capacity: capacity.max(1),
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity.clamp(1, 1024)),
                closed: false,
                received: 0,
                dropped: 0,
            }),
            ready: Condvar::new(),
        }
    }

    /// Returns false once the queue is closed.
    pub(crate) fn push(&self, item: T) -> bool {
        let mut st = self.state.lock();
        if st.closed {
            return false;
        }
        if st.items.len() == self.capacity {
            st.items.pop_front();
            st.dropped += 1;
        }
        st.items.push_back(item);
        st.received += 1;
        drop(st);
        self.ready.notify_one();
        true
    }

    /// Pops the oldest item. `None` on timeout, or when the queue is closed
    /// and drained.
    pub(crate) fn pop(&self, wait: Wait) -> Option<T> {
        let mut st = self.state.lock();
        loop {
            if let Some(item) = st.items.pop_front() {
                return Some(item);
            }
            if st.closed {
                return None;
            }
            match wait {
                Wait::Immediate => return None,
                Wait::Forever => self.ready.wait(&mut st),
                Wait::Until(deadline) => {
                    if self.ready.wait_until(&mut st, deadline).timed_out() {
                        return st.items.pop_front();
                    }
                }
            }
        }
    }

    pub(crate) fn close(&self) {
        self.state.lock().closed = true;
        self.ready.notify_all();
    }

    pub(crate) fn stats(&self) -> QueueStats {
        let st = self.state.lock();
        QueueStats {
            received: st.received,
            dropped: st.dropped,
            buffered: st.items.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::time::Duration;

    #[test]
    fn keeps_newest_items() {
        let q = BoundedQueue::new(10);
        for i in 0..11 {
            q.push(i);
        }
        let got: Vec<_> = std::iter::from_fn(|| q.pop(Wait::Immediate)).collect();
        assert_eq!(got, (1..11).collect::<Vec<_>>());
        assert_eq!(q.stats().dropped, 1);
        assert_eq!(q.stats().received, 11);
    }

    #[test]
    fn blocking_pop_wakes_on_push() {
        let q = Arc::new(BoundedQueue::new(2));
        let q2 = q.clone();
        let t = std::thread::spawn(move || q2.pop(Wait::Forever));
        std::thread::sleep(Duration::from_millis(20));
        q.push(5);
        assert_eq!(t.join().unwrap(), Some(5));
    }

    #[test]
    fn deadline_expires() {
        let q: BoundedQueue<u8> = BoundedQueue::new(1);
        let start = Instant::now();
        assert_eq!(q.pop(Wait::Until(start + Duration::from_millis(30))), None);
        assert!(start.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn close_wakes_waiters() {
        let q: Arc<BoundedQueue<u8>> = Arc::new(BoundedQueue::new(1));
        let q2 = q.clone();
        let t = std::thread::spawn(move || q2.pop(Wait::Forever));
        std::thread::sleep(Duration::from_millis(10));
        q.close();
        assert_eq!(t.join().unwrap(), None);
        assert!(!q.push(1));
    }
}
