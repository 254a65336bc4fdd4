//! Passive observation points for safety auditing.
//!
//! The simulator records protocol-relevant events into an [`AuditLog`] as a
//! side channel; no node behavior depends on it. Post-run checks consume
//! these records to verify agreement, durability, and exactly-once laws.

use std::collections::BTreeMap;

use crate::messages::{CommandId, ReplicaId, Request, Seq, ViewNumber};
use crate::sim::event::Tick;

/// A proposal observed on the wire (at emission time).
#[derive(Debug, Clone)]
pub struct ProposeRecord {
    pub tick: Tick,
    pub partition: u32,
    pub proposer: ReplicaId,
    pub sequence: Seq,
    pub view: ViewNumber,
    pub request: Request,
}

/// A commit observed at emission time.
#[derive(Debug, Clone)]
pub struct CommitRecord {
    pub tick: Tick,
    pub partition: u32,
    pub committer: ReplicaId,
    pub sequence: Seq,
    pub view: ViewNumber,
    pub request: Request,
}

/// One request applied by one executor, in its local execution order.
#[derive(Debug, Clone)]
pub struct ExecutionRecord {
    pub tick: Tick,
    pub executor: ReplicaId,
    /// Partition-merged sequence number.
    pub sequence: Seq,
    pub request: Request,
}

/// One command's effect on the service state, recorded once per (executor,
/// command-instance) even when the reply came from the result cache.
#[derive(Debug, Clone)]
pub struct ApplyRecord {
    pub tick: Tick,
    pub executor: ReplicaId,
    /// Merged position of the request carrying the command.
    pub sequence: Seq,
    pub command: CommandId,
    pub fresh: bool,
}

/// An executor adopting a checkpoint blob instead of executing forward.
#[derive(Debug, Clone)]
pub struct RestoreRecord {
    pub tick: Tick,
    pub executor: ReplicaId,
    pub sequence: Seq,
}

#[derive(Debug, Clone)]
pub struct CheckpointWriteRecord {
    pub tick: Tick,
    pub executor: ReplicaId,
    pub sequence: Seq,
}

#[derive(Debug, Clone)]
pub struct ViewAnnounceRecord {
    pub tick: Tick,
    pub partition: u32,
    pub controller: ReplicaId,
    pub view: ViewNumber,
}

#[derive(Debug, Clone)]
pub struct StableRecord {
    pub tick: Tick,
    pub source: ReplicaId,
    pub stable_sequence: Seq,
}

/// Safety-law violation detected while the run was in flight (cheap checks
/// only; the heavyweight ones run post-hoc on the full log).
#[derive(Debug, Clone)]
pub struct Violation {
    pub tick: Tick,
    pub message: String,
}

#[derive(Default)]
pub struct AuditLog {
    pub proposes: Vec<ProposeRecord>,
    pub commits: Vec<CommitRecord>,
    pub executions: Vec<ExecutionRecord>,
    pub applies: Vec<ApplyRecord>,
    pub restores: Vec<RestoreRecord>,
    pub checkpoints: Vec<CheckpointWriteRecord>,
    pub view_announces: Vec<ViewAnnounceRecord>,
    pub stables: Vec<StableRecord>,
    /// Highest occupied-slot count ever seen per (stage name, instance).
    pub window_peaks: BTreeMap<(String, ReplicaId), usize>,
    pub violations: Vec<Violation>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn violation(&mut self, tick: Tick, message: String) {
        self.violations.push(Violation { tick, message });
    }

    pub fn note_window(&mut self, stage: &str, instance: ReplicaId, occupied: usize) {
        let peak = self
            .window_peaks
            .entry((stage.to_string(), instance))
            .or_insert(0);
        if occupied > *peak {
            *peak = occupied;
        }
    }

    /// Per-executor execution order, as (sequence, request) pairs.
    pub fn execution_logs(&self) -> BTreeMap<ReplicaId, Vec<(Seq, Request)>> {
        let mut logs: BTreeMap<ReplicaId, Vec<(Seq, Request)>> = BTreeMap::new();
        for rec in &self.executions {
            logs.entry(rec.executor)
                .or_default()
                .push((rec.sequence, rec.request.clone()));
        }
        logs
    }
}
