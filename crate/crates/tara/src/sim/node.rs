//! The interface between the scheduler and a stage instance.
//!
//! Nodes are single-threaded state machines: the simulator calls exactly one
//! handler at a time, handlers push [`Effect`]s into the context, and the
//! simulator turns effects into future events (message deliveries, timer
//! fires, client replies). Nodes never touch the clock, the network, or each
//! other directly, which is what makes runs reproducible.

use std::any::Any;
use std::collections::BTreeSet;

use crate::messages::{Command, ReplicaId, Reply, RequestNumber, Seq, Tuple};
use crate::sim::audit::AuditLog;
use crate::sim::event::{Tick, TimerKind};
use crate::sim::store::{CheckpointBlob, DurableStore};
use crate::topology::StreamKind;

/// A side effect requested by a node handler.
#[derive(Debug, Clone)]
pub enum Effect {
    /// Emit on an output stream, routed per the topology. `key` selects the
    /// target partition on partition-routed streams and is ignored otherwise.
    Emit {
        stream: StreamKind,
        key: Option<u32>,
        tuple: Tuple,
    },
    /// Emit to one specific instance of the stream's target stage. `key`
    /// selects the target partition when the stream has per-partition target
    /// stages.
    EmitDirect {
        stream: StreamKind,
        key: Option<u32>,
        target: ReplicaId,
        tuple: Tuple,
    },
    /// Arm a timer that fires `after` ticks from now (dies with the
    /// instance's incarnation).
    SetTimer { timer: TimerKind, after: Tick },
    /// Acknowledge a request lineage back to its source through the
    /// substrate's ack channel.
    Ack {
        source: ReplicaId,
        number: RequestNumber,
    },
    /// Hand a reply to the external client world.
    Reply(Reply),
}

/// Handler-scoped view of the simulator: effect buffer, durable storage,
/// audit side channel, and checkpoint reachability.
pub struct NodeContext<'a> {
    pub now: Tick,
    /// Instance index within the stage.
    pub instance: ReplicaId,
    /// Stage partition, `None` for shared stages.
    pub partition: Option<u32>,
    pub effects: Vec<Effect>,
    pub store: &'a mut DurableStore,
    pub audit: &'a mut AuditLog,
    crashed_executors: &'a BTreeSet<ReplicaId>,
}

impl<'a> NodeContext<'a> {
    pub fn new(
        now: Tick,
        instance: ReplicaId,
        partition: Option<u32>,
        store: &'a mut DurableStore,
        audit: &'a mut AuditLog,
        crashed_executors: &'a BTreeSet<ReplicaId>,
    ) -> Self {
        NodeContext {
            now,
            instance,
            partition,
            effects: Vec::new(),
            store,
            audit,
            crashed_executors,
        }
    }

    pub fn emit(&mut self, stream: StreamKind, tuple: Tuple) {
        self.effects.push(Effect::Emit {
            stream,
            key: None,
            tuple,
        });
    }

    /// Emit on a partition-routed stream, selecting the target partition.
    pub fn emit_key(&mut self, stream: StreamKind, key: u32, tuple: Tuple) {
        self.effects.push(Effect::Emit {
            stream,
            key: Some(key),
            tuple,
        });
    }

    pub fn emit_direct(&mut self, stream: StreamKind, target: ReplicaId, tuple: Tuple) {
        self.effects.push(Effect::EmitDirect {
            stream,
            key: None,
            target,
            tuple,
        });
    }

    /// Direct emission on a stream with per-partition target stages.
    pub fn emit_direct_key(
        &mut self,
        stream: StreamKind,
        key: u32,
        target: ReplicaId,
        tuple: Tuple,
    ) {
        self.effects.push(Effect::EmitDirect {
            stream,
            key: Some(key),
            target,
            tuple,
        });
    }

    pub fn set_timer(&mut self, timer: TimerKind, after: Tick) {
        self.effects.push(Effect::SetTimer { timer, after });
    }

    pub fn ack(&mut self, source: ReplicaId, number: RequestNumber) {
        self.effects.push(Effect::Ack { source, number });
    }

    pub fn reply(&mut self, reply: Reply) {
        self.effects.push(Effect::Reply(reply));
    }

    /// Fetch a checkpoint blob with the given label from any executor whose
    /// storage is currently reachable.
    pub fn fetch_checkpoint(&self, sequence: Seq) -> Option<CheckpointBlob> {
        let crashed = self.crashed_executors;
        self.store
            .fetch_blob(sequence, |e| !crashed.contains(&e))
            .cloned()
    }
}

/// A stage instance. One incarnation per (node, lifetime-between-crashes);
/// a restart builds a fresh value via the node factory.
pub trait Node {
    /// Called once when the incarnation begins (deployment or restart).
    fn on_start(&mut self, ctx: &mut NodeContext);

    /// Called per delivered tuple. `partition` is the sending stage's
    /// partition, for shared stages consuming per-partition streams.
    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        partition: Option<u32>,
        tuple: Tuple,
    );

    fn on_timer(&mut self, ctx: &mut NodeContext, timer: TimerKind);

    /// Substrate acknowledgement for a request this node emitted.
    fn on_ack(&mut self, _ctx: &mut NodeContext, _number: RequestNumber) {}

    /// External command injected into this node's input queue.
    fn on_queue(&mut self, _ctx: &mut NodeContext, _command: Command) {}

    /// Occupied slots in this node's sequence window, if it keeps one.
    fn window_usage(&self) -> Option<usize> {
        None
    }

    /// Digest of volatile state, for cross-run comparison.
    fn state_digest(&self) -> u64;

    fn as_any(&self) -> &dyn Any;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::store::CheckpointBlob;
    use std::collections::BTreeMap;

    #[test]
    fn fetch_checkpoint_respects_crash_set() {
        let mut store = DurableStore::new();
        let mut audit = AuditLog::new();
        for e in 0..2u32 {
            store.put_blob(CheckpointBlob {
                executor: e,
                sequence: 10,
                app_snapshot: vec![],
                t_exec: BTreeMap::new(),
                result_cache: BTreeMap::new(),
                q_frontier: BTreeMap::new(),
            });
        }
        let crashed: BTreeSet<ReplicaId> = [0u32].into_iter().collect();
        let ctx = NodeContext::new(5, 0, None, &mut store, &mut audit, &crashed);
        assert_eq!(ctx.fetch_checkpoint(10).unwrap().executor, 1);
        assert!(ctx.fetch_checkpoint(20).is_none());
    }

    #[test]
    fn effects_accumulate_in_order() {
        let mut store = DurableStore::new();
        let mut audit = AuditLog::new();
        let crashed = BTreeSet::new();
        let mut ctx = NodeContext::new(0, 1, Some(0), &mut store, &mut audit, &crashed);
        ctx.set_timer(TimerKind::Produce, 3);
        ctx.ack(0, 7);
        assert_eq!(ctx.effects.len(), 2);
        assert!(matches!(ctx.effects[0], Effect::SetTimer { .. }));
        assert!(matches!(
            ctx.effects[1],
            Effect::Ack {
                source: 0,
                number: 7
            }
        ));
    }
}
