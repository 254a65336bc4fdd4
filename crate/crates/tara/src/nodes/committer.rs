//! Committer: votes on proposed sequence assignments.
//!
//! A committer accepts a proposal only when its view matches the committer's
//! current view and the sequence number lies inside the window above the
//! stability threshold. Acceptance writes a durable slot record and emits a
//! commit vote; f+1 matching votes make a slot executable. Records are
//! durable because a committed-but-unstable slot must survive any f crashes:
//! with volatile records, f crashed committers plus one crashed executor
//! could erase every copy of a request the client already saw succeed.
//!
//! On adopting a higher view the committer publishes its whole record window
//! toward the proposer that the view makes active, and keeps re-publishing
//! on view refreshes until that proposer's first proposal arrives, so a
//! record quorum forms even when individual publications are lost.

use std::any::Any;

use crate::messages::{Commit, Records, Seq, SlotRecord, Tuple, ViewNumber};
use crate::nodes::feedback::active_proposer;
use crate::partitioning::local_threshold;
use crate::sim::audit::CommitRecord;
use crate::sim::event::TimerKind;
use crate::sim::node::{Node, NodeContext};
use crate::topology::StreamKind;
use crate::window::QuorumAdopter;
use crate::wire::fnv64;

pub struct CommitterNode {
    f: u32,
    partition: u32,
    partitions: u32,
    window_size: u32,
    stable: QuorumAdopter,
    view: QuorumAdopter,
    /// Whether a proposal has been accepted in the current view; suppresses
    /// further record publications.
    proposed_in_view: bool,
    /// Mirror of the durable record count, for window accounting.
    in_window: usize,
}

impl CommitterNode {
    pub fn new(f: u32, partition: u32, partitions: u32, window_size: u32) -> Self {
        CommitterNode {
            f,
            partition,
            partitions,
            window_size,
            stable: QuorumAdopter::new(f, -1),
            view: QuorumAdopter::new(f, 0),
            proposed_in_view: false,
            in_window: 0,
        }
    }

    fn local_thr(&self) -> Seq {
        local_threshold(self.stable.adopted(), self.partition, self.partitions)
    }

    fn adopted_view(&self) -> ViewNumber {
        self.view.adopted() as ViewNumber
    }

    /// Publishes the record window toward the active proposer of `view`.
    fn publish_records(&self, ctx: &mut NodeContext, view: ViewNumber) {
        let thr = self.local_thr();
        let records = ctx
            .store
            .committer_records(self.partition, ctx.instance)
            .range((thr + 1)..)
            .map(|(s, (v, req))| {
                (
                    *s,
                    SlotRecord {
                        view: *v,
                        request: req.clone(),
                    },
                )
            })
            .collect();
        ctx.emit(
            StreamKind::Record,
            Tuple::Records(Records {
                committer: ctx.instance,
                view_target: view,
                records,
            }),
        );
    }

    fn on_propose(&mut self, ctx: &mut NodeContext, p: crate::messages::Propose) {
        let view = self.adopted_view();
        if p.view != view {
            return;
        }
        if p.proposer != active_proposer(view, self.f) {
            ctx.audit.violation(
                ctx.now,
                format!(
                    "proposal for view {view} from non-active proposer {} in partition {}",
                    p.proposer, self.partition
                ),
            );
            return;
        }
        let thr = self.local_thr();
        if p.sequence <= thr || p.sequence > thr + self.window_size as Seq {
            return;
        }
        {
            let records = ctx.store.committer_records(self.partition, ctx.instance);
            if let Some((v, req)) = records.get(&p.sequence) {
                if *v == p.view && *req != p.request {
                    ctx.audit.violation(
                        ctx.now,
                        format!(
                            "two requests proposed for slot {} in view {view} of partition {}",
                            p.sequence, self.partition
                        ),
                    );
                    return;
                }
                if *v > p.view {
                    return;
                }
            }
            if records
                .insert(p.sequence, (p.view, p.request.clone()))
                .is_none()
            {
                self.in_window += 1;
            }
        }
        self.proposed_in_view = true;
        ctx.audit.commits.push(CommitRecord {
            tick: ctx.now,
            partition: self.partition,
            committer: ctx.instance,
            sequence: p.sequence,
            view: p.view,
            request: p.request.clone(),
        });
        ctx.emit(
            StreamKind::Commit,
            Tuple::Commit(Commit {
                committer: ctx.instance,
                sequence: p.sequence,
                view: p.view,
                request: p.request,
            }),
        );
    }
}

impl Node for CommitterNode {
    fn on_start(&mut self, ctx: &mut NodeContext) {
        // After a rejoin the durable records are still in the store; pick the
        // count back up. Adoption state restarts conservatively and heals
        // from announcer refreshes.
        self.in_window = ctx
            .store
            .committer_records(self.partition, ctx.instance)
            .len();
    }

    fn on_tuple(
        &mut self,
        ctx: &mut NodeContext,
        stream: StreamKind,
        _partition: Option<u32>,
        tuple: Tuple,
    ) {
        match (stream, tuple) {
            (StreamKind::Propose, Tuple::Propose(p)) => self.on_propose(ctx, p),
            (StreamKind::Stable, Tuple::Stable(st)) => {
                if self.stable.observe(st.source, st.stable_sequence).is_some() {
                    let thr = self.local_thr();
                    let records = ctx.store.committer_records(self.partition, ctx.instance);
                    *records = records.split_off(&(thr + 1));
                    self.in_window = records.len();
                }
            }
            (StreamKind::View, Tuple::NewView(nv)) => {
                if self.view.observe(nv.controller, nv.view as i64).is_some() {
                    self.proposed_in_view = false;
                    self.publish_records(ctx, self.adopted_view());
                } else if nv.view == self.adopted_view() && !self.proposed_in_view {
                    // Refresh while the incoming proposer has not spoken yet:
                    // re-publish in case earlier publications were lost.
                    self.publish_records(ctx, self.adopted_view());
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, _ctx: &mut NodeContext, _timer: TimerKind) {}

    fn window_usage(&self) -> Option<usize> {
        Some(self.in_window)
    }

    fn state_digest(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.adopted_view().to_le_bytes());
        bytes.extend_from_slice(&self.stable.adopted().to_le_bytes());
        bytes.push(self.proposed_in_view as u8);
        fnv64(&bytes)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
