//! Controller: detects execution stalls and announces view changes.
//!
//! A controller compares the work sources say is outstanding (target
//! reports) against the work executors say is done (progress reports). When
//! a quorum of executors shows no progress for the stall window while
//! outstanding work exists, the current proposer is presumed crashed and the
//! controller announces the next view. Controllers also periodically
//! re-announce their adopted view so view relays that crashed and forgot the
//! view re-learn it.

use std::any::Any;
use std::collections::BTreeMap;

use crate::messages::{NewView, ReplicaId, RequestNumber, Tuple, ViewNumber};
use crate::sim::audit::ViewAnnounceRecord;
use crate::sim::event::{Tick, TimerKind};
use crate::sim::node::{Node, NodeContext};
use crate::topology::StreamKind;
use crate::window::QuorumAdopter;
use crate::wire::fnv64;

struct ExecutorTrack {
    /// Last reported per-source execution frontier.
    frontiers: BTreeMap<ReplicaId, RequestNumber>,
    /// Last tick this executor showed forward movement (or the last time the
    /// stall clocks were reset).
    last_progress: Tick,
}

pub struct ControllerNode {
    f: u32,
    stall_timeout: Tick,
    controller_period: Tick,
    source_expiry: Tick,
    refresh_period: Tick,
    view: QuorumAdopter,
    /// Per-source outstanding-work target and when it was last heard.
    targets: BTreeMap<ReplicaId, (RequestNumber, Tick)>,
    executors: BTreeMap<ReplicaId, ExecutorTrack>,
    last_refresh: Tick,
}

impl ControllerNode {
    pub fn new(
        f: u32,
        stall_timeout: Tick,
        controller_period: Tick,
        source_expiry: Tick,
        refresh_period: Tick,
    ) -> Self {
        ControllerNode {
            f,
            stall_timeout,
            controller_period,
            source_expiry,
            refresh_period,
            view: QuorumAdopter::new(f, 0),
            targets: BTreeMap::new(),
            executors: BTreeMap::new(),
            last_refresh: 0,
        }
    }

    fn adopted(&self) -> ViewNumber {
        self.view.adopted() as ViewNumber
    }

    fn announce(&self, ctx: &mut NodeContext, view: ViewNumber) {
        ctx.emit(
            StreamKind::ViewAnnounce,
            Tuple::NewView(NewView {
                controller: ctx.instance,
                view,
            }),
        );
    }

    fn reset_stall_clocks(&mut self, now: Tick) {
        for track in self.executors.values_mut() {
            track.last_progress = now;
        }
    }

    /// Whether this executor sits still while some source reports work it
    /// has not executed.
    fn stalled(&self, track: &ExecutorTrack, now: Tick) -> bool {
        if now.saturating_sub(track.last_progress) < self.stall_timeout {
            return false;
        }
        self.targets.iter().any(|(source, (target, _))| {
            let frontier = track.frontiers.get(source).map(|q| *q as i64).unwrap_or(-1);
            *target as i64 > frontier
        })
    }

    fn evaluate(&mut self, ctx: &mut NodeContext) {
        let now = ctx.now;
        self.targets
            .retain(|_, (_, heard)| now.saturating_sub(*heard) < self.source_expiry);
        if !self.targets.is_empty() {
            let stalled = self
                .executors
                .values()
                .filter(|track| self.stalled(track, now))
                .count() as u32;
            if stalled > self.f {
                let next = self.adopted() + 1;
                ctx.audit.view_announces.push(ViewAnnounceRecord {
                    tick: now,
                    partition: ctx.partition.unwrap_or(0),
                    controller: ctx.instance,
                    view: next,
                });
                self.announce(ctx, next);
                self.reset_stall_clocks(now);
            }
        }
        if now.saturating_sub(self.last_refresh) >= self.refresh_period {
            self.last_refresh = now;
            self.announce(ctx, self.adopted());
        }
    }
}

impl Node for ControllerNode {
    fn on_start(&mut self, ctx: &mut NodeContext) {
        self.last_refresh = ctx.now;
        ctx.set_timer(TimerKind::Evaluate, self.controller_period);
    }

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        match (stream, tuple) {
            (StreamKind::Target, Tuple::Target(t)) => {
                let entry = self
                    .targets
                    .entry(t.source)
                    .or_insert((t.request_number, ctx.now));
                if t.request_number > entry.0 {
                    entry.0 = t.request_number;
                }
                entry.1 = ctx.now;
            }
            (StreamKind::Actual, Tuple::Actual(a)) => {
                let now = ctx.now;
                let track = self.executors.entry(a.executor).or_insert(ExecutorTrack {
                    frontiers: BTreeMap::new(),
                    last_progress: now,
                });
                let moved = a
                    .progress
                    .iter()
                    .any(|(source, q)| track.frontiers.get(source).is_none_or(|have| q > have));
                if moved {
                    track.last_progress = now;
                }
                track.frontiers = a.progress;
            }
            (StreamKind::View, Tuple::NewView(nv))
                if self.view.observe(nv.controller, nv.view as i64).is_some() => {
                    // Someone else moved the view; give the incoming proposer
                    // a full stall window before judging it.
                    self.reset_stall_clocks(ctx.now);
                }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeContext, timer: TimerKind) {
        if timer == TimerKind::Evaluate {
            self.evaluate(ctx);
            ctx.set_timer(TimerKind::Evaluate, self.controller_period);
        }
    }

    fn state_digest(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.adopted().to_le_bytes());
        for (source, (target, _)) in &self.targets {
            bytes.extend_from_slice(&source.to_le_bytes());
            bytes.extend_from_slice(&target.to_le_bytes());
        }
        for (executor, track) in &self.executors {
            bytes.extend_from_slice(&executor.to_le_bytes());
            for (source, q) in &track.frontiers {
                bytes.extend_from_slice(&source.to_le_bytes());
                bytes.extend_from_slice(&q.to_le_bytes());
            }
        }
        fnv64(&bytes)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
