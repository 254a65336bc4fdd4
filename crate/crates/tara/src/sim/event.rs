//! Event queue plumbing for the deterministic simulator.

use std::cmp::Ordering;

use crate::messages::{Command, Reply, RequestNumber, Tuple};
use crate::topology::StreamKind;

pub type Tick = u64;

/// Origin id used for events installed by the harness schedule rather than a
/// node or client.
pub const SCHEDULER_ORIGIN: u32 = u32::MAX;

/// Total order over simultaneous events: tick, then originating actor, then
/// that actor's emission counter. Two runs with the same seed process events
/// in exactly the same order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventKey {
    pub tick: Tick,
    pub origin: u32,
    pub seq: u64,
}

impl Ord for EventKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.tick, self.origin, self.seq).cmp(&(other.tick, other.origin, other.seq))
    }
}

impl PartialOrd for EventKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Timers a node can arm for itself. The meaning is role-specific.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Source cadence: emit pending output, retransmit, refresh.
    Produce,
    /// Batch flush deadline at a request source.
    Batch,
    /// Periodic progress/housekeeping reports (executors).
    Progress,
    /// Controller stall evaluation.
    Evaluate,
    /// Retry a blocked step, e.g. an unavailable snapshot fetch.
    Retry,
    /// Drain queued work held back by a rate cap or full window.
    Drain,
}

impl TimerKind {
    pub fn name(self) -> &'static str {
        match self {
            TimerKind::Produce => "produce",
            TimerKind::Batch => "batch",
            TimerKind::Progress => "progress",
            TimerKind::Evaluate => "evaluate",
            TimerKind::Retry => "retry",
            TimerKind::Drain => "drain",
        }
    }
}

#[derive(Debug, Clone)]
pub enum EventKind {
    /// Tuple arriving at a node over a stream.
    Deliver {
        dst: usize,
        stream: StreamKind,
        partition: Option<u32>,
        tuple: Tuple,
    },
    /// Client command entering a request source's input queue.
    QueueInsert {
        dst: usize,
        command: Command,
    },
    /// Node-armed timer. Carries the incarnation that armed it so timers die
    /// with the instance.
    Timer {
        node: usize,
        incarnation: u32,
        timer: TimerKind,
    },
    /// Framework-level completion signal for a source-originated request.
    Ack {
        dst: usize,
        number: RequestNumber,
    },
    Crash {
        node: usize,
    },
    Restart {
        node: usize,
    },
    ClientWake {
        client: u64,
    },
    ClientDeliver {
        client: u64,
        reply: Reply,
    },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub key: EventKey,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_order_is_tick_then_origin_then_seq() {
        let k = |tick, origin, seq| EventKey { tick, origin, seq };
        assert!(k(1, 5, 9) < k(2, 0, 0));
        assert!(k(2, 1, 9) < k(2, 2, 0));
        assert!(k(2, 2, 3) < k(2, 2, 4));
    }
}
