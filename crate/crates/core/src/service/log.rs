use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::broadcast;

use crate::events::StreamEvent;

pub const DEFAULT_RING_CAPACITY: usize = 1000;

/// The requested position is older than anything still buffered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evicted {
    pub oldest_available: u64,
}

/// Per-session event history: a bounded ring for resumption plus a broadcast
/// channel for live subscribers.
#[derive(Debug)]
pub struct EventLog {
    ring: Mutex<VecDeque<StreamEvent>>,
    capacity: usize,
    live: broadcast::Sender<StreamEvent>,
}

impl EventLog {
    pub fn new(capacity: usize) -> Self {
        let (live, _) = broadcast::channel(capacity.max(16));
        EventLog {
            ring: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity,
            live,
        }
    }

    pub fn push(&self, event: StreamEvent) {
        let mut ring = self.ring.lock().expect("event log poisoned");
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        ring.push_back(event.clone());
        // no subscribers is fine
        let _ = self.live.send(event);
    }

    /// Events after `last_seen`, plus a receiver for everything that follows.
    /// Both are taken under one lock, so nothing falls between them.
    pub fn subscribe_after(
        &self,
        last_seen: u64,
    ) -> Result<(Vec<StreamEvent>, broadcast::Receiver<StreamEvent>), Evicted> {
        let ring = self.ring.lock().expect("event log poisoned");
        if let Some(oldest) = ring.front() {
            if last_seen + 1 < oldest.revision {
                return Err(Evicted {
                    oldest_available: oldest.revision,
                });
            }
        }
        let backlog = ring.iter().filter(|e| e.revision > last_seen).cloned().collect();
        Ok((backlog, self.live.subscribe()))
    }

    pub fn latest_revision(&self) -> Option<u64> {
        self.ring.lock().expect("event log poisoned").back().map(|e| e.revision)
    }
}
