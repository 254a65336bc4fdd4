//! Proposer: assigns partition-local sequence numbers to requests.
//!
//! Exactly one proposer per partition is active in a view (view modulo the
//! proposer count). An instance may only propose in a view it has *entered*:
//! either it is instance 0 at deployment (seeded into view 0), or it has
//! collected the window records of f+1 distinct committers for exactly that
//! view. Entry rebuilds the slot assignment from the records — any sequence
//! number that ever reached a commit quorum appears in at least one of the
//! f+1 collections, so re-proposals can never contradict a committed slot —
//! and fills uncovered slots below the highest covered one with held
//! requests or explicit no-ops so the merged execution order has no holes.
//!
//! A restarted proposer re-enters the same way. Until it does it stays
//! silent, which is what makes sequence assignments safe against proposer
//! amnesia: a fresh instance can only take over through a record quorum, at
//! which point it resumes above everything that may have committed.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::messages::{
    Propose, ReplicaId, Request, RequestNumber, Seq, SlotRecord, Tuple, ViewNumber,
};
use crate::nodes::feedback::active_proposer;
use crate::partitioning::local_threshold;
use crate::sim::audit::ProposeRecord;
use crate::sim::event::{Tick, TimerKind};
use crate::sim::node::{Node, NodeContext};
use crate::topology::StreamKind;
use crate::window::QuorumAdopter;
use crate::wire::fnv64;

pub struct ProposerNode {
    f: u32,
    partition: u32,
    partitions: u32,
    window_size: u32,
    max_per_tick: u32,
    /// Stability threshold adoption (merged sequence space).
    stable: QuorumAdopter,
    /// View adoption for this partition.
    view: QuorumAdopter,
    /// Highest view this instance has entered, if any.
    entered: Option<ViewNumber>,
    next_seq: Seq,
    /// Request occupying each assigned, not-yet-stable slot. Soft-bounded:
    /// new assignments respect the window, but view entry keeps every
    /// collected record even if the stale local threshold makes the span
    /// briefly exceed it.
    window: BTreeMap<Seq, Request>,
    assignments: BTreeMap<(ReplicaId, RequestNumber), Seq>,
    pending: VecDeque<Request>,
    pending_set: BTreeSet<(ReplicaId, RequestNumber)>,
    /// Record collections per target view, per sending committer.
    records_buffer: BTreeMap<ViewNumber, BTreeMap<ReplicaId, BTreeMap<Seq, SlotRecord>>>,
    last_tick: Tick,
    sent_this_tick: u32,
    drain_armed: bool,
}

impl ProposerNode {
    pub fn new(
        f: u32,
        partition: u32,
        partitions: u32,
        window_size: u32,
        max_per_tick: u32,
        seed_entered: bool,
    ) -> Self {
        ProposerNode {
            f,
            partition,
            partitions,
            window_size,
            max_per_tick,
            stable: QuorumAdopter::new(f, -1),
            view: QuorumAdopter::new(f, 0),
            entered: if seed_entered { Some(0) } else { None },
            next_seq: 0,
            window: BTreeMap::new(),
            assignments: BTreeMap::new(),
            pending: VecDeque::new(),
            pending_set: BTreeSet::new(),
            records_buffer: BTreeMap::new(),
            last_tick: 0,
            sent_this_tick: 0,
            drain_armed: false,
        }
    }

    fn local_thr(&self) -> Seq {
        local_threshold(self.stable.adopted(), self.partition, self.partitions)
    }

    fn adopted_view(&self) -> ViewNumber {
        self.view.adopted() as ViewNumber
    }

    fn is_active(&self, instance: ReplicaId) -> bool {
        self.entered == Some(self.adopted_view())
            && active_proposer(self.adopted_view(), self.f) == instance
    }

    fn pending_cap(&self) -> usize {
        (4 * self.window_size as usize).max(256)
    }

    fn emit_propose(&mut self, ctx: &mut NodeContext, sequence: Seq, request: Request) {
        let view = self.adopted_view();
        ctx.audit.proposes.push(ProposeRecord {
            tick: ctx.now,
            partition: self.partition,
            proposer: ctx.instance,
            sequence,
            view,
            request: request.clone(),
        });
        ctx.emit(
            StreamKind::Propose,
            Tuple::Propose(Propose {
                proposer: ctx.instance,
                sequence,
                view,
                request,
            }),
        );
    }

    /// Rate-cap accounting; returns false when this tick's budget is spent.
    fn budget_ok(&mut self, ctx: &mut NodeContext) -> bool {
        if self.max_per_tick == 0 {
            return true;
        }
        if ctx.now != self.last_tick {
            self.last_tick = ctx.now;
            self.sent_this_tick = 0;
        }
        if self.sent_this_tick >= self.max_per_tick {
            if !self.drain_armed {
                self.drain_armed = true;
                ctx.set_timer(TimerKind::Drain, 1);
            }
            return false;
        }
        true
    }

    fn drain_pending(&mut self, ctx: &mut NodeContext) {
        while self.is_active(ctx.instance) && !self.pending.is_empty() {
            if self.next_seq > self.local_thr() + self.window_size as Seq {
                break; // window full; stability advance resumes the drain
            }
            if !self.budget_ok(ctx) {
                break;
            }
            let request = self.pending.pop_front().unwrap();
            let key = (request.source, request.number);
            self.pending_set.remove(&key);
            if self.assignments.contains_key(&key) {
                continue;
            }
            let sequence = self.next_seq;
            self.next_seq += 1;
            self.window.insert(sequence, request.clone());
            self.assignments.insert(key, sequence);
            self.sent_this_tick += 1;
            self.emit_propose(ctx, sequence, request);
        }
    }

    /// Attempts to enter the currently adopted view from buffered records.
    fn try_enter(&mut self, ctx: &mut NodeContext) {
        let view = self.adopted_view();
        if self.entered == Some(view) || active_proposer(view, self.f) != ctx.instance {
            return;
        }
        let Some(coll) = self.records_buffer.get(&view) else {
            return;
        };
        if coll.len() < self.f as usize + 1 {
            return;
        }

        let thr = self.local_thr();
        let mut chosen: BTreeMap<Seq, (ViewNumber, Request)> = BTreeMap::new();
        for records in coll.values() {
            for (&s, slot) in records {
                if s <= thr {
                    continue;
                }
                match chosen.get(&s) {
                    Some((v, req)) if *v == slot.view && *req != slot.request => {
                        ctx.audit.violation(
                            ctx.now,
                            format!(
                                "conflicting records for slot {s} view {v} in partition {}",
                                self.partition
                            ),
                        );
                    }
                    Some((v, _)) if *v >= slot.view => {}
                    _ => {
                        chosen.insert(s, (slot.view, slot.request.clone()));
                    }
                }
            }
        }

        let max_covered = chosen.keys().next_back().copied().unwrap_or(thr);
        self.window.clear();
        self.assignments.clear();
        for (s, (_, request)) in &chosen {
            if !request.is_noop() {
                self.assignments
                    .insert((request.source, request.number), *s);
            }
            self.window.insert(*s, request.clone());
        }
        // Fill uncovered slots below the highest covered one. None of them
        // ever reached a commit quorum (a committed slot appears in at least
        // one of f+1 collections), so any request or a no-op is safe.
        for s in (thr + 1)..=max_covered {
            if self.window.contains_key(&s) {
                continue;
            }
            let filler = loop {
                match self.pending.pop_front() {
                    Some(req) => {
                        let key = (req.source, req.number);
                        self.pending_set.remove(&key);
                        if self.assignments.contains_key(&key) {
                            continue;
                        }
                        self.assignments.insert(key, s);
                        break req;
                    }
                    None => break Request::noop(s),
                }
            };
            self.window.insert(s, filler);
        }
        self.next_seq = max_covered + 1;
        self.entered = Some(view);
        self.records_buffer = self.records_buffer.split_off(&(view + 1));

        let slots: Vec<(Seq, Request)> = self.window.iter().map(|(s, r)| (*s, r.clone())).collect();
        for (s, request) in slots {
            self.emit_propose(ctx, s, request);
        }
        self.drain_pending(ctx);
    }

    fn on_request(&mut self, ctx: &mut NodeContext, request: Request) {
        let key = (request.source, request.number);
        if let Some(&s) = self.assignments.get(&key) {
            if s <= self.local_thr() {
                // Slot already stable: the request is durably executed, so
                // complete its lineage directly.
                ctx.ack(request.source, request.number);
            } else if self.is_active(ctx.instance) {
                // Retransmission of an in-flight assignment: re-drive the
                // same slot in the current view.
                if let Some(assigned) = self.window.get(&s).cloned() {
                    self.emit_propose(ctx, s, assigned);
                }
            }
            return;
        }
        if self.pending_set.contains(&key) {
            return;
        }
        if self.pending.len() >= self.pending_cap() {
            if let Some(old) = self.pending.pop_front() {
                self.pending_set.remove(&(old.source, old.number));
            }
        }
        self.pending_set.insert(key);
        self.pending.push_back(request);
        self.drain_pending(ctx);
    }
}

impl Node for ProposerNode {
    fn on_start(&mut self, _ctx: &mut NodeContext) {}

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        match (stream, tuple) {
            (StreamKind::Request, Tuple::Request(request)) => self.on_request(ctx, request),
            (StreamKind::Stable, Tuple::Stable(st)) => {
                if self.stable.observe(st.source, st.stable_sequence).is_some() {
                    let thr = self.local_thr();
                    self.window = self.window.split_off(&(thr + 1));
                    let floor = thr - 2 * self.window_size as Seq;
                    self.assignments.retain(|_, s| *s > floor);
                    if self.next_seq <= thr {
                        self.next_seq = thr + 1;
                    }
                    self.drain_pending(ctx);
                }
            }
            (StreamKind::View, Tuple::NewView(nv)) => {
                if self.view.observe(nv.controller, nv.view as i64).is_some() {
                    let adopted = self.adopted_view();
                    self.records_buffer = self.records_buffer.split_off(&adopted);
                    self.try_enter(ctx);
                }
            }
            (StreamKind::Records, Tuple::Records(rec)) => {
                let view = rec.view_target;
                if view < self.adopted_view() || active_proposer(view, self.f) != ctx.instance {
                    return;
                }
                self.records_buffer
                    .entry(view)
                    .or_default()
                    .insert(rec.committer, rec.records);
                self.try_enter(ctx);
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeContext, timer: TimerKind) {
        if timer == TimerKind::Drain {
            self.drain_armed = false;
            self.drain_pending(ctx);
        }
    }

    fn window_usage(&self) -> Option<usize> {
        Some(self.window.len())
    }

    fn state_digest(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.adopted_view().to_le_bytes());
        bytes.extend_from_slice(&self.entered.unwrap_or(u64::MAX).to_le_bytes());
        bytes.extend_from_slice(&self.next_seq.to_le_bytes());
        bytes.extend_from_slice(&self.stable.adopted().to_le_bytes());
        for (s, req) in &self.window {
            bytes.extend_from_slice(&s.to_le_bytes());
            bytes.extend_from_slice(&Tuple::Request(req.clone()).digest64().to_le_bytes());
        }
        bytes.extend_from_slice(&(self.pending.len() as u64).to_le_bytes());
        fnv64(&bytes)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
