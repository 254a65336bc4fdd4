//! Mapping between partition-local and merged execution sequence numbers.
//!
//! With P partitions, partition i's local sequence s_i occupies merged
//! position s_i * P + i, so executors interleave partitions round-robin and
//! the mapping is a bijection.

use std::collections::BTreeSet;

use crate::messages::{RequestNumber, Seq};

/// Merged execution position for partition-local sequence `s_local` of
/// partition `i` out of `p`.
pub fn exec_sequence(s_local: Seq, i: u32, p: u32) -> Seq {
    debug_assert!(i < p);
    s_local * p as Seq + i as Seq
}

/// Inverse of `exec_sequence`: merged position to (partition, local).
pub fn split_sequence(s_exec: Seq, p: u32) -> (u32, Seq) {
    debug_assert!(s_exec >= 0);
    ((s_exec % p as Seq) as u32, s_exec / p as Seq)
}

/// Highest partition-local sequence of partition `i` whose merged position is
/// at or below the merged threshold. -1 when nothing of partition `i` is
/// covered. Replicas of a partition use this to translate a merged stability
/// threshold into their local window bound.
pub fn local_threshold(merged: Seq, i: u32, p: u32) -> Seq {
    debug_assert!(i < p);
    if merged < i as Seq {
        return -1;
    }
    (merged - i as Seq) / p as Seq
}

/// Static request-to-partition routing by request number.
pub fn assign_partition(number: RequestNumber, p: u32) -> u32 {
    (number % p as u64) as u32
}

/// Collects merged positions as they become executable and releases them in
/// strict merged order from a cursor.
#[derive(Debug, Clone)]
pub struct MergeBuffer {
    next: Seq,
    ready: BTreeSet<Seq>,
}

impl MergeBuffer {
    pub fn new() -> Self {
        MergeBuffer {
            next: 0,
            ready: BTreeSet::new(),
        }
    }

    pub fn next_position(&self) -> Seq {
        self.next
    }

    /// Marks a merged position executable. Positions behind the cursor are
    /// ignored (already executed or skipped over by a catch-up).
    pub fn offer(&mut self, s_exec: Seq) {
        if s_exec >= self.next {
            self.ready.insert(s_exec);
        }
    }

    /// Pops the next position if it is ready.
    pub fn pop_ready(&mut self) -> Option<Seq> {
        if self.ready.remove(&self.next) {
            self.next += 1;
            Some(self.next - 1)
        } else {
            None
        }
    }

    /// Moves the cursor to `next`, discarding anything behind it. Used after
    /// restoring from a checkpoint.
    pub fn skip_to(&mut self, next: Seq) {
        if next > self.next {
            self.next = next;
            self.ready = self.ready.split_off(&next);
        }
    }

    pub fn pending(&self) -> usize {
        self.ready.len()
    }
}

impl Default for MergeBuffer {
    fn default() -> Self {
        Self::new()
    }
}
