//! Sink and source stages for the three feedback loops.
//!
//! Processing stages never send upstream directly; instead, announcements
//! flow into sink stages whose output queues feed paired source stages, which
//! re-enter the graph as fresh input. Sinks are dumb forwarders; sources
//! aggregate and re-broadcast, and their periodic refresh is what heals
//! losses and amnesiac restarts (consumers treat announcements as
//! at-least-once and adopt monotonically).

use std::any::Any;

use crate::messages::{NewView, ReplicaId, Stable, Tuple, ViewNumber};
use crate::sim::audit::StableRecord;
use crate::sim::event::{Tick, TimerKind};
use crate::sim::node::{Node, NodeContext};
use crate::topology::StreamKind;
use crate::window::QuorumMax;
use crate::wire::fnv64;

/// Per-partition reply egress: forwards executor replies to the external
/// client world. Instance i serves the sessions of request source i.
pub struct RequestSinkNode {
    forwarded: u64,
}

impl Default for RequestSinkNode {
    fn default() -> Self {
        Self::new()
    }
}

impl RequestSinkNode {
    pub fn new() -> Self {
        RequestSinkNode { forwarded: 0 }
    }
}

impl Node for RequestSinkNode {
    fn on_start(&mut self, _ctx: &mut NodeContext) {}

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        if let (StreamKind::Reply, Tuple::Reply(reply)) = (stream, tuple) {
            self.forwarded += 1;
            ctx.reply(reply);
        }
    }

    fn on_timer(&mut self, _ctx: &mut NodeContext, _timer: TimerKind) {}

    fn state_digest(&self) -> u64 {
        fnv64(&self.forwarded.to_le_bytes())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Forwards a stream unchanged into the paired source stage. Used for
/// checkpoint announcements, view announcements, and committer records.
pub struct FeedForwardNode {
    accept: StreamKind,
    out: StreamKind,
    forwarded: u64,
}

impl FeedForwardNode {
    pub fn new(accept: StreamKind, out: StreamKind) -> Self {
        FeedForwardNode {
            accept,
            out,
            forwarded: 0,
        }
    }
}

impl Node for FeedForwardNode {
    fn on_start(&mut self, _ctx: &mut NodeContext) {}

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        if stream == self.accept {
            self.forwarded += 1;
            ctx.emit(self.out, tuple);
        }
    }

    fn on_timer(&mut self, _ctx: &mut NodeContext, _timer: TimerKind) {}

    fn state_digest(&self) -> u64 {
        fnv64(&self.forwarded.to_le_bytes())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Computes the stability threshold from executor checkpoint announcements:
/// the highest sequence number that f+1 distinct executors have durably
/// covered. Announces on every increase and refreshes periodically.
pub struct GcSourceNode {
    checkpoints: QuorumMax,
    announced: i64,
    refresh_period: Tick,
}

impl GcSourceNode {
    pub fn new(f: u32, refresh_period: Tick) -> Self {
        GcSourceNode {
            checkpoints: QuorumMax::new(f),
            announced: -1,
            refresh_period,
        }
    }

    fn announce(&self, ctx: &mut NodeContext) {
        ctx.emit(
            StreamKind::Stable,
            Tuple::Stable(Stable {
                source: ctx.instance,
                stable_sequence: self.announced,
            }),
        );
    }
}

impl Node for GcSourceNode {
    fn on_start(&mut self, ctx: &mut NodeContext) {
        ctx.set_timer(TimerKind::Produce, self.refresh_period);
    }

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        if stream != StreamKind::GcFeed {
            return;
        }
        let Tuple::Checkpoint(cp) = tuple else { return };
        if let Some(q) = self.checkpoints.update(cp.executor, cp.sequence) {
            if q > self.announced {
                self.announced = q;
                ctx.audit.stables.push(StableRecord {
                    tick: ctx.now,
                    source: ctx.instance,
                    stable_sequence: q,
                });
                self.announce(ctx);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeContext, timer: TimerKind) {
        if timer == TimerKind::Produce {
            self.announce(ctx);
            ctx.set_timer(TimerKind::Produce, self.refresh_period);
        }
    }

    fn state_digest(&self) -> u64 {
        let mut bytes = self.announced.to_le_bytes().to_vec();
        for (e, s) in self.checkpoints.reported() {
            bytes.extend_from_slice(&e.to_le_bytes());
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        fnv64(&bytes)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Re-broadcasts the highest view announced by any controller of its
/// partition, immediately on increase and periodically as a refresh.
pub struct ViewSourceNode {
    highest: ViewNumber,
    refresh_period: Tick,
}

impl ViewSourceNode {
    pub fn new(refresh_period: Tick) -> Self {
        ViewSourceNode {
            highest: 0,
            refresh_period,
        }
    }

    fn announce(&self, ctx: &mut NodeContext) {
        ctx.emit(
            StreamKind::View,
            Tuple::NewView(NewView {
                controller: ctx.instance,
                view: self.highest,
            }),
        );
    }
}

impl Node for ViewSourceNode {
    fn on_start(&mut self, ctx: &mut NodeContext) {
        ctx.set_timer(TimerKind::Produce, self.refresh_period);
    }

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        if stream != StreamKind::ViewFeed {
            return;
        }
        let Tuple::NewView(nv) = tuple else { return };
        if nv.view > self.highest {
            self.highest = nv.view;
            self.announce(ctx);
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeContext, timer: TimerKind) {
        if timer == TimerKind::Produce {
            self.announce(ctx);
            ctx.set_timer(TimerKind::Produce, self.refresh_period);
        }
    }

    fn state_digest(&self) -> u64 {
        fnv64(&self.highest.to_le_bytes())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Routes committer record bundles to the proposer that the target view
/// makes active.
pub struct RecordSourceNode {
    proposer_count: u32,
    forwarded: u64,
}

impl RecordSourceNode {
    pub fn new(f: u32) -> Self {
        RecordSourceNode {
            proposer_count: f + 1,
            forwarded: 0,
        }
    }
}

impl Node for RecordSourceNode {
    fn on_start(&mut self, _ctx: &mut NodeContext) {}

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        if stream != StreamKind::RecordFeed {
            return;
        }
        let Tuple::Records(rec) = tuple else { return };
        let active: ReplicaId = (rec.view_target % self.proposer_count as ViewNumber) as ReplicaId;
        self.forwarded += 1;
        ctx.emit_direct(StreamKind::Records, active, Tuple::Records(rec));
    }

    fn on_timer(&mut self, _ctx: &mut NodeContext, _timer: TimerKind) {}

    fn state_digest(&self) -> u64 {
        fnv64(&self.forwarded.to_le_bytes())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Shared helper: the proposer made active by a view.
pub fn active_proposer(view: ViewNumber, f: u32) -> ReplicaId {
    (view % (f as ViewNumber + 1)) as ReplicaId
}
