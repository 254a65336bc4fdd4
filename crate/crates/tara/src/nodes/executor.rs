//! Executor: merges per-partition commit streams into one total order,
//! applies commands to the replicated KV service, and writes checkpoints.
//!
//! A slot executes once f+1 distinct committers of its partition have
//! committed the same request in the view the executor currently holds for
//! that partition, and every earlier merged position has executed. Falling
//! more than a checkpoint behind is repaired by adopting a peer's snapshot
//! instead of replaying.
//!
//! Sources are acknowledged at *stability*, not at execution: an executed
//! position above the stable threshold still depends on volatile state, and
//! acknowledging it early would let the only parties able to re-drive it
//! forget the request. Every executor therefore tracks executed-but-unstable
//! positions and acks them when the threshold passes.

use std::any::Any;
use std::collections::BTreeMap;

use crate::app::{KvService, ServiceApplication};
use crate::messages::{
    Actual, Checkpoint, ClientId, Commit, ReplicaId, Reply, Request, RequestNumber, Seq, Tuple,
    ViewNumber,
};
use crate::partitioning::{exec_sequence, split_sequence};
use crate::sim::audit::{ApplyRecord, CheckpointWriteRecord, ExecutionRecord, RestoreRecord};
use crate::sim::event::{Tick, TimerKind};
use crate::sim::node::{Node, NodeContext};
use crate::sim::store::{CheckpointBlob, SourceProgress};
use crate::topology::StreamKind;
use crate::window::QuorumAdopter;
use crate::wire::fnv64;

pub struct ExecutorNode {
    f: u32,
    partitions: u32,
    /// Checkpoint cadence in merged positions.
    checkpoint_interval: u32,
    actual_period: Tick,
    catchup_retry: Tick,
    /// One view adopter per partition; commits only count toward execution
    /// in the view currently held for their partition.
    views: Vec<QuorumAdopter>,
    /// Merged stability threshold adopter.
    stable: QuorumAdopter,
    /// Commit votes per merged position; latest view per committer.
    tallies: BTreeMap<Seq, BTreeMap<ReplicaId, (ViewNumber, Request)>>,
    /// Quorum-backed requests waiting for their position in the total order.
    exec_ready: BTreeMap<Seq, Request>,
    /// Next merged position to execute.
    next_exec: Seq,
    kv: KvService,
    /// Highest executed command timestamp per client.
    t_exec: BTreeMap<ClientId, u64>,
    /// Latest result per client, for duplicate re-replies.
    result_cache: BTreeMap<ClientId, (u64, Vec<u8>)>,
    /// Per-source executed-request tracking (frontier plus out-of-order
    /// numbers executed ahead of it).
    q_frontier: BTreeMap<ReplicaId, SourceProgress>,
    /// Executed positions not yet covered by the stable threshold, with the
    /// request lineage to acknowledge once they are.
    exec_unacked: BTreeMap<Seq, (ReplicaId, RequestNumber)>,
    /// Own latest durable checkpoint label, -1 before the first.
    latest_checkpoint: Seq,
    catchup_armed: bool,
}

impl ExecutorNode {
    pub fn new(
        f: u32,
        partitions: u32,
        checkpoint_interval: u32,
        actual_period: Tick,
        catchup_retry: Tick,
    ) -> Self {
        ExecutorNode {
            f,
            partitions,
            checkpoint_interval,
            actual_period,
            catchup_retry,
            views: (0..partitions).map(|_| QuorumAdopter::new(f, 0)).collect(),
            stable: QuorumAdopter::new(f, -1),
            tallies: BTreeMap::new(),
            exec_ready: BTreeMap::new(),
            next_exec: 0,
            kv: KvService::new(),
            t_exec: BTreeMap::new(),
            result_cache: BTreeMap::new(),
            q_frontier: BTreeMap::new(),
            exec_unacked: BTreeMap::new(),
            latest_checkpoint: -1,
            catchup_armed: false,
        }
    }

    pub fn next_exec(&self) -> Seq {
        self.next_exec
    }

    pub fn latest_checkpoint(&self) -> Seq {
        self.latest_checkpoint
    }

    pub fn kv(&self) -> &KvService {
        &self.kv
    }

    fn make_blob(&self, executor: ReplicaId, sequence: Seq) -> CheckpointBlob {
        CheckpointBlob {
            executor,
            sequence,
            app_snapshot: self.kv.snapshot(),
            t_exec: self.t_exec.clone(),
            result_cache: self.result_cache.clone(),
            q_frontier: self.q_frontier.clone(),
        }
    }

    fn adopt_blob(&mut self, blob: &CheckpointBlob) {
        self.kv
            .restore(&blob.app_snapshot)
            .expect("checkpoint snapshots are written canonically");
        self.t_exec = blob.t_exec.clone();
        self.result_cache = blob.result_cache.clone();
        self.q_frontier = blob.q_frontier.clone();
        self.next_exec = blob.sequence + 1;
        self.latest_checkpoint = blob.sequence;
        self.tallies = self.tallies.split_off(&(blob.sequence + 1));
        self.exec_ready = self.exec_ready.split_off(&(blob.sequence + 1));
    }

    fn write_checkpoint(&mut self, ctx: &mut NodeContext, sequence: Seq) {
        ctx.store.put_blob(self.make_blob(ctx.instance, sequence));
        self.latest_checkpoint = sequence;
        ctx.audit.checkpoints.push(CheckpointWriteRecord {
            tick: ctx.now,
            executor: ctx.instance,
            sequence,
        });
        ctx.emit(
            StreamKind::Checkpoint,
            Tuple::Checkpoint(Checkpoint {
                executor: ctx.instance,
                sequence,
            }),
        );
    }

    /// Promotes a tallied slot to executable if f+1 committers back the same
    /// request in the slot partition's current view.
    fn try_quorum(&mut self, ctx: &mut NodeContext, merged: Seq) {
        if merged < self.next_exec || self.exec_ready.contains_key(&merged) {
            return;
        }
        let Some(votes) = self.tallies.get(&merged) else {
            return;
        };
        let (partition, _) = split_sequence(merged, self.partitions);
        let view = self.views[partition as usize].adopted() as ViewNumber;
        let mut backed: Option<&Request> = None;
        let mut count = 0u32;
        let mut conflict = false;
        for (v, req) in votes.values() {
            if *v != view {
                continue;
            }
            count += 1;
            match backed {
                None => backed = Some(req),
                Some(first) if first != req => conflict = true,
                _ => {}
            }
        }
        if count < self.f + 1 {
            return;
        }
        if conflict {
            ctx.audit.violation(
                ctx.now,
                format!("conflicting commit quorum at merged position {merged} in view {view}"),
            );
        }
        let request = backed.expect("count >= 1 implies a backed request").clone();
        self.tallies.remove(&merged);
        self.exec_ready.insert(merged, request);
        self.drain_exec(ctx);
    }

    fn drain_exec(&mut self, ctx: &mut NodeContext) {
        while let Some(request) = self.exec_ready.remove(&self.next_exec) {
            let s = self.next_exec;
            self.tallies.remove(&s);
            self.execute(ctx, s, request);
            self.next_exec = s + 1;
            // Persist right before crossing into the next interval: labels
            // run CP-1, 2*CP-1, ... so every interval length down to 1 works.
            if (s + 1) % self.checkpoint_interval as Seq == 0 {
                self.write_checkpoint(ctx, s);
            }
        }
    }

    fn execute(&mut self, ctx: &mut NodeContext, s: Seq, request: Request) {
        ctx.audit.executions.push(ExecutionRecord {
            tick: ctx.now,
            executor: ctx.instance,
            sequence: s,
            request: request.clone(),
        });
        if request.is_noop() {
            return;
        }
        let (partition, _) = split_sequence(s, self.partitions);
        for command in &request.commands {
            let client = command.id.client;
            let ts = command.id.timestamp;
            let executed = self.t_exec.get(&client).copied().unwrap_or(0);
            if ts > executed {
                let result = self.kv.apply(&command.op);
                self.t_exec.insert(client, ts);
                self.result_cache.insert(client, (ts, result.clone()));
                ctx.audit.applies.push(ApplyRecord {
                    tick: ctx.now,
                    executor: ctx.instance,
                    sequence: s,
                    command: command.id,
                    fresh: true,
                });
                ctx.emit_direct_key(
                    StreamKind::Reply,
                    partition,
                    request.source,
                    Tuple::Reply(Reply {
                        command: command.id,
                        result,
                        source: request.source,
                    }),
                );
            } else {
                ctx.audit.applies.push(ApplyRecord {
                    tick: ctx.now,
                    executor: ctx.instance,
                    sequence: s,
                    command: command.id,
                    fresh: false,
                });
                // Duplicate of the client's latest command: re-reply from the
                // cache. Older duplicates get nothing; the client has moved on.
                if ts == executed {
                    if let Some((cached_ts, result)) = self.result_cache.get(&client) {
                        if *cached_ts == ts {
                            ctx.emit_direct_key(
                                StreamKind::Reply,
                                partition,
                                request.source,
                                Tuple::Reply(Reply {
                                    command: command.id,
                                    result: result.clone(),
                                    source: request.source,
                                }),
                            );
                        }
                    }
                }
            }
        }
        self.q_frontier
            .entry(request.source)
            .or_default()
            .record(request.number);
        self.exec_unacked
            .insert(s, (request.source, request.number));
    }

    fn on_commit(&mut self, ctx: &mut NodeContext, partition: u32, c: Commit) {
        let merged = exec_sequence(c.sequence, partition, self.partitions);
        if merged < self.next_exec {
            // Already executed (or skipped by a catch-up). Re-ack stable
            // positions: cheap insurance against lost acknowledgements.
            if merged <= self.stable.adopted() && !c.request.is_noop() {
                ctx.ack(c.request.source, c.request.number);
            }
            return;
        }
        if self.exec_ready.contains_key(&merged) {
            return; // already decided, waiting for in-order execution
        }
        let slot = self.tallies.entry(merged).or_default();
        let entry = slot
            .entry(c.committer)
            .or_insert((c.view, c.request.clone()));
        if c.view >= entry.0 {
            *entry = (c.view, c.request);
        }
        self.try_quorum(ctx, merged);
    }

    fn attempt_catchup(&mut self, ctx: &mut NodeContext) {
        let target = self.stable.adopted();
        if self.next_exec > target {
            return;
        }
        match ctx.fetch_checkpoint(target) {
            Some(blob) => {
                self.adopt_blob(&blob);
                ctx.audit.restores.push(RestoreRecord {
                    tick: ctx.now,
                    executor: ctx.instance,
                    sequence: target,
                });
                // Re-persist under our own key: keeps a full quorum of owners
                // for the threshold blob, so later joiners can always reach a
                // copy.
                ctx.store.put_blob(self.make_blob(ctx.instance, target));
                ctx.emit(
                    StreamKind::Checkpoint,
                    Tuple::Checkpoint(Checkpoint {
                        executor: ctx.instance,
                        sequence: target,
                    }),
                );
                self.drain_exec(ctx);
            }
            None => {
                if !self.catchup_armed {
                    self.catchup_armed = true;
                    ctx.set_timer(TimerKind::Retry, self.catchup_retry);
                }
            }
        }
    }

    fn on_stable_adopted(&mut self, ctx: &mut NodeContext) {
        let threshold = self.stable.adopted();
        // Our own blobs at or above the threshold stay useful; older ones are
        // garbage. Laggards needing older labels retarget after they adopt
        // the current threshold.
        if self.latest_checkpoint >= threshold {
            ctx.store.prune_blobs(ctx.instance, threshold);
        }
        let unstable = self.exec_unacked.split_off(&(threshold + 1));
        for (source, number) in std::mem::replace(&mut self.exec_unacked, unstable).into_values() {
            ctx.ack(source, number);
        }
        if self.next_exec <= threshold {
            self.attempt_catchup(ctx);
        }
    }
}

impl Node for ExecutorNode {
    fn on_start(&mut self, ctx: &mut NodeContext) {
        if let Some(latest) = ctx.store.latest_checkpoint(ctx.instance) {
            let me = ctx.instance;
            let own = ctx
                .store
                .fetch_blob(latest, |e| e == me)
                .cloned()
                .expect("own latest blob is never pruned");
            self.adopt_blob(&own);
            ctx.emit(
                StreamKind::Checkpoint,
                Tuple::Checkpoint(Checkpoint {
                    executor: me,
                    sequence: latest,
                }),
            );
        }
        ctx.set_timer(TimerKind::Progress, self.actual_period);
    }

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        partition: Option<u32>,
        tuple: Tuple,
    ) {
        match (stream, tuple) {
            (StreamKind::Commit, Tuple::Commit(c)) => {
                let Some(p) = partition else { return };
                self.on_commit(ctx, p, c);
            }
            (StreamKind::Stable, Tuple::Stable(st)) => {
                if self.stable.observe(st.source, st.stable_sequence).is_some() {
                    self.on_stable_adopted(ctx);
                }
            }
            (StreamKind::View, Tuple::NewView(nv)) => {
                let Some(p) = partition else { return };
                if self.views[p as usize]
                    .observe(nv.controller, nv.view as i64)
                    .is_some()
                {
                    // Buffered commits from the new view may now form quorums.
                    let pending: Vec<Seq> = self
                        .tallies
                        .keys()
                        .copied()
                        .filter(|s| split_sequence(*s, self.partitions).0 == p)
                        .collect();
                    for s in pending {
                        self.try_quorum(ctx, s);
                    }
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeContext, timer: TimerKind) {
        match timer {
            TimerKind::Progress => {
                let progress: BTreeMap<ReplicaId, RequestNumber> = self
                    .q_frontier
                    .iter()
                    .filter(|(_, p)| p.frontier >= 0)
                    .map(|(src, p)| (*src, p.frontier as RequestNumber))
                    .collect();
                ctx.emit(
                    StreamKind::Actual,
                    Tuple::Actual(Actual {
                        executor: ctx.instance,
                        progress,
                    }),
                );
                // Re-announce the latest checkpoint so restarted
                // garbage-collection stages re-learn it.
                if self.latest_checkpoint >= 0 {
                    ctx.emit(
                        StreamKind::Checkpoint,
                        Tuple::Checkpoint(Checkpoint {
                            executor: ctx.instance,
                            sequence: self.latest_checkpoint,
                        }),
                    );
                }
                ctx.set_timer(TimerKind::Progress, self.actual_period);
            }
            TimerKind::Retry => {
                self.catchup_armed = false;
                if self.next_exec <= self.stable.adopted() {
                    self.attempt_catchup(ctx);
                }
            }
            _ => {}
        }
    }

    fn window_usage(&self) -> Option<usize> {
        Some(self.tallies.len() + self.exec_ready.len())
    }

    fn state_digest(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.next_exec.to_le_bytes());
        bytes.extend_from_slice(&self.stable.adopted().to_le_bytes());
        for v in &self.views {
            bytes.extend_from_slice(&v.adopted().to_le_bytes());
        }
        bytes.extend_from_slice(&fnv64(&self.kv.snapshot()).to_le_bytes());
        for (client, ts) in &self.t_exec {
            bytes.extend_from_slice(&client.to_le_bytes());
            bytes.extend_from_slice(&ts.to_le_bytes());
        }
        bytes.extend_from_slice(&(self.exec_unacked.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&self.latest_checkpoint.to_le_bytes());
        fnv64(&bytes)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
