//! Durable state surviving crashes.
//!
//! Three things outlive a replica instance: executor snapshots (external
//! checkpoint storage), committer slot records (framework state recovery),
//! and each request source's minted-request ledger (the replayable input
//! queue). Everything else is volatile and lost on crash.
//!
//! Snapshot storage is co-located with its executor's server, so blobs of a
//! crashed executor are unreachable until it returns; the stability rule
//! guarantees f+1 replicas announced any adopted threshold, hence at least
//! one reachable copy.

use std::collections::{BTreeMap, BTreeSet};

use crate::messages::{ClientId, ReplicaId, Request, RequestNumber, Seq, ViewNumber};
use crate::wire::{Reader, WireError, Writer};

/// Executed-request tracking for one source. With several partitions a
/// source's requests interleave in the merged order, so the executed set can
/// have gaps: `frontier` is the contiguous prefix (-1 for none) and `ahead`
/// holds executed numbers beyond it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceProgress {
    pub frontier: i64,
    pub ahead: BTreeSet<RequestNumber>,
}

impl SourceProgress {
    pub fn new() -> Self {
        SourceProgress {
            frontier: -1,
            ahead: BTreeSet::new(),
        }
    }

    /// Marks `number` executed; returns whether the frontier advanced.
    pub fn record(&mut self, number: RequestNumber) -> bool {
        if (number as i64) <= self.frontier {
            return false;
        }
        if number as i64 == self.frontier + 1 {
            self.frontier = number as i64;
            while self.ahead.remove(&(self.frontier as u64 + 1)) {
                self.frontier += 1;
            }
            true
        } else {
            self.ahead.insert(number);
            false
        }
    }

    pub fn contains(&self, number: RequestNumber) -> bool {
        number as i64 <= self.frontier || self.ahead.contains(&number)
    }
}

/// Everything needed to recreate an executor at sequence number `sequence`:
/// service snapshot, duplicate-detection state, result cache, and per-source
/// executed-request tracking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointBlob {
    pub executor: ReplicaId,
    pub sequence: Seq,
    pub app_snapshot: Vec<u8>,
    /// Per client, highest executed command timestamp.
    pub t_exec: BTreeMap<ClientId, u64>,
    /// Per client, result of the command at `t_exec` (depth-1 cache).
    pub result_cache: BTreeMap<ClientId, (u64, Vec<u8>)>,
    /// Per source, executed request numbers.
    pub q_frontier: BTreeMap<ReplicaId, SourceProgress>,
}

impl CheckpointBlob {
    /// Canonical encoding; equal executor states produce identical bytes, so
    /// snapshot comparison is byte comparison.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u32(self.executor);
        w.put_i64(self.sequence);
        w.put_bytes(&self.app_snapshot);
        w.put_u32(self.t_exec.len() as u32);
        for (c, t) in &self.t_exec {
            w.put_u64(*c);
            w.put_u64(*t);
        }
        w.put_u32(self.result_cache.len() as u32);
        for (c, (t, r)) in &self.result_cache {
            w.put_u64(*c);
            w.put_u64(*t);
            w.put_bytes(r);
        }
        w.put_u32(self.q_frontier.len() as u32);
        for (s, p) in &self.q_frontier {
            w.put_u32(*s);
            w.put_i64(p.frontier);
            w.put_u32(p.ahead.len() as u32);
            for q in &p.ahead {
                w.put_u64(*q);
            }
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<CheckpointBlob, WireError> {
        let mut r = Reader::new(bytes);
        let executor = r.get_u32()?;
        let sequence = r.get_i64()?;
        let app_snapshot = r.get_bytes()?;
        let mut t_exec = BTreeMap::new();
        for _ in 0..r.get_u32()? {
            let c = r.get_u64()?;
            let t = r.get_u64()?;
            t_exec.insert(c, t);
        }
        let mut result_cache = BTreeMap::new();
        for _ in 0..r.get_u32()? {
            let c = r.get_u64()?;
            let t = r.get_u64()?;
            let res = r.get_bytes()?;
            result_cache.insert(c, (t, res));
        }
        let mut q_frontier = BTreeMap::new();
        for _ in 0..r.get_u32()? {
            let s = r.get_u32()?;
            let frontier = r.get_i64()?;
            let mut ahead = BTreeSet::new();
            for _ in 0..r.get_u32()? {
                ahead.insert(r.get_u64()?);
            }
            q_frontier.insert(s, SourceProgress { frontier, ahead });
        }
        r.finish()?;
        Ok(CheckpointBlob {
            executor,
            sequence,
            app_snapshot,
            t_exec,
            result_cache,
            q_frontier,
        })
    }

    /// State excluding the writing executor's identity; used to compare
    /// different executors' snapshots of the same sequence number.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut anon = self.clone();
        anon.executor = 0;
        anon.encode()
    }
}

/// A request source's durable side: its request-number counter and its
/// minted-but-unacknowledged requests.
#[derive(Debug, Clone, Default)]
pub struct SourceLedger {
    pub next_number: RequestNumber,
    pub pending: BTreeMap<RequestNumber, Request>,
}

#[derive(Default)]
pub struct DurableStore {
    blobs: BTreeMap<(Seq, ReplicaId), CheckpointBlob>,
    latest_checkpoint: BTreeMap<ReplicaId, Seq>,
    committer_records: BTreeMap<(u32, ReplicaId), BTreeMap<Seq, (ViewNumber, Request)>>,
    source_ledgers: BTreeMap<ReplicaId, SourceLedger>,
}

impl DurableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_blob(&mut self, blob: CheckpointBlob) {
        let key = (blob.sequence, blob.executor);
        let latest = self
            .latest_checkpoint
            .entry(blob.executor)
            .or_insert(blob.sequence);
        if blob.sequence > *latest {
            *latest = blob.sequence;
        }
        self.blobs.insert(key, blob);
    }

    /// Latest checkpoint sequence an executor ever wrote, surviving its
    /// crashes.
    pub fn latest_checkpoint(&self, executor: ReplicaId) -> Option<Seq> {
        self.latest_checkpoint.get(&executor).copied()
    }

    /// Fetches a blob for `sequence` from the lowest-numbered executor whose
    /// storage is currently reachable.
    pub fn fetch_blob(
        &self,
        sequence: Seq,
        reachable: impl Fn(ReplicaId) -> bool,
    ) -> Option<&CheckpointBlob> {
        self.blobs
            .range((sequence, 0)..=(sequence, ReplicaId::MAX))
            .map(|(_, blob)| blob)
            .find(|blob| reachable(blob.executor))
    }

    pub fn blob_copies(&self, sequence: Seq) -> Vec<ReplicaId> {
        self.blobs
            .range((sequence, 0)..=(sequence, ReplicaId::MAX))
            .map(|((_, e), _)| *e)
            .collect()
    }

    /// Drops an executor's own blobs below `keep_from`.
    pub fn prune_blobs(&mut self, executor: ReplicaId, keep_from: Seq) {
        self.blobs
            .retain(|(s, e), _| *e != executor || *s >= keep_from);
    }

    pub fn committer_records(
        &mut self,
        partition: u32,
        committer: ReplicaId,
    ) -> &mut BTreeMap<Seq, (ViewNumber, Request)> {
        self.committer_records
            .entry((partition, committer))
            .or_default()
    }

    pub fn source_ledger(&mut self, source: ReplicaId) -> &mut SourceLedger {
        self.source_ledgers.entry(source).or_default()
    }

    pub fn blob_count(&self) -> usize {
        self.blobs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(executor: ReplicaId, sequence: Seq) -> CheckpointBlob {
        CheckpointBlob {
            executor,
            sequence,
            app_snapshot: vec![1, 2, 3],
            t_exec: [(1u64, 5u64)].into_iter().collect(),
            result_cache: [(1u64, (5u64, vec![9]))].into_iter().collect(),
            q_frontier: [(
                0u32,
                SourceProgress {
                    frontier: 4,
                    ahead: [7u64].into_iter().collect(),
                },
            )]
            .into_iter()
            .collect(),
        }
    }

    #[test]
    fn source_progress_absorbs_out_of_order_numbers() {
        let mut p = SourceProgress::new();
        assert!(p.record(0));
        assert!(!p.record(2));
        assert!(!p.record(3));
        assert_eq!(p.frontier, 0);
        assert!(p.contains(2));
        assert!(!p.contains(1));
        // Filling the gap absorbs the run beyond it.
        assert!(p.record(1));
        assert_eq!(p.frontier, 3);
        assert!(p.ahead.is_empty());
        // Duplicates change nothing.
        assert!(!p.record(2));
        assert_eq!(p.frontier, 3);
    }

    #[test]
    fn blob_encoding_round_trips() {
        let b = blob(2, 100);
        assert_eq!(CheckpointBlob::decode(&b.encode()).unwrap(), b);
    }

    #[test]
    fn state_bytes_ignore_writer_identity() {
        let a = blob(0, 100);
        let b = blob(2, 100);
        assert_ne!(a.encode(), b.encode());
        assert_eq!(a.state_bytes(), b.state_bytes());
    }

    #[test]
    fn fetch_skips_unreachable_copies() {
        let mut store = DurableStore::new();
        store.put_blob(blob(0, 100));
        store.put_blob(blob(1, 100));
        store.put_blob(blob(2, 200));

        let got = store.fetch_blob(100, |e| e != 0).unwrap();
        assert_eq!(got.executor, 1);
        assert!(store.fetch_blob(100, |e| e > 1).is_none());
        assert_eq!(store.blob_copies(100), vec![0, 1]);
    }

    #[test]
    fn latest_checkpoint_survives_pruning() {
        let mut store = DurableStore::new();
        store.put_blob(blob(0, 100));
        store.put_blob(blob(0, 200));
        store.prune_blobs(0, 200);
        assert_eq!(store.latest_checkpoint(0), Some(200));
        assert!(store.fetch_blob(100, |_| true).is_none());
        assert!(store.fetch_blob(200, |_| true).is_some());
    }

    #[test]
    fn ledgers_and_records_default_empty() {
        let mut store = DurableStore::new();
        assert_eq!(store.source_ledger(0).next_number, 0);
        assert!(store.committer_records(0, 1).is_empty());
    }
}
