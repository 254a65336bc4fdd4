//! Request source: client ingress into consensus.
//!
//! Commands from client sessions are batched into requests carrying a
//! per-source strictly increasing request number, routed to the owning
//! partition's proposers. The number counter and the set of in-flight
//! requests are durable: after a crash the instance resumes from its ledger,
//! which prevents number reuse and makes every minted request eventually
//! either acknowledged or retransmitted.
//!
//! A request stays in the ledger until the substrate acknowledges it, which
//! happens once its sequence position is covered by the stability threshold;
//! until then it is retransmitted with exponential backoff. Acknowledgement
//! on stability (rather than first execution) matters: an executed-but-
//! unstable position can still be lost from every volatile stage by f
//! crashes, and only the retransmission path can re-drive it.

use std::any::Any;
use std::collections::BTreeMap;

use crate::messages::{Command, Request, RequestNumber, Target, Tuple};
use crate::partitioning::assign_partition;
use crate::sim::event::{Tick, TimerKind};
use crate::sim::node::{Node, NodeContext};
use crate::topology::StreamKind;
use crate::wire::fnv64;

struct FlightState {
    last_sent: Tick,
    /// Current backoff interval; doubles per retransmission.
    timeout: Tick,
}

pub struct RequestSourceNode {
    partitions: u32,
    batch_size: u32,
    batch_timeout: Tick,
    source_period: Tick,
    target_period: Tick,
    retransmit_timeout: Tick,
    batch: Vec<Command>,
    /// Send bookkeeping per in-flight request number; entries missing for a
    /// ledger entry (after a restart) count as overdue.
    flights: BTreeMap<RequestNumber, FlightState>,
    last_target: Option<Tick>,
}

impl RequestSourceNode {
    pub fn new(
        partitions: u32,
        batch_size: u32,
        batch_timeout: Tick,
        timers: &crate::config::TimerConfig,
    ) -> Self {
        RequestSourceNode {
            partitions,
            batch_size,
            batch_timeout,
            source_period: timers.source_period,
            target_period: timers.target_period,
            retransmit_timeout: timers.retransmit_timeout,
            batch: Vec::new(),
            flights: BTreeMap::new(),
            last_target: None,
        }
    }

    fn send(&mut self, ctx: &mut NodeContext, request: Request) {
        let number = request.number;
        let key = assign_partition(number, self.partitions);
        self.flights.insert(
            number,
            FlightState {
                last_sent: ctx.now,
                timeout: self.retransmit_timeout,
            },
        );
        ctx.emit_key(StreamKind::Request, key, Tuple::Request(request));
    }

    fn flush(&mut self, ctx: &mut NodeContext) {
        if self.batch.is_empty() {
            return;
        }
        let commands = std::mem::take(&mut self.batch);
        let ledger = ctx.store.source_ledger(ctx.instance);
        let number = ledger.next_number;
        ledger.next_number += 1;
        let request = Request {
            source: ctx.instance,
            number,
            commands,
        };
        ledger.pending.insert(number, request.clone());
        self.send(ctx, request);
    }

    fn emit_target(&mut self, ctx: &mut NodeContext) {
        let next = ctx.store.source_ledger(ctx.instance).next_number;
        if next == 0 {
            return;
        }
        self.last_target = Some(ctx.now);
        ctx.emit(
            StreamKind::Target,
            Tuple::Target(Target {
                source: ctx.instance,
                request_number: next - 1,
            }),
        );
    }
}

impl Node for RequestSourceNode {
    fn on_start(&mut self, ctx: &mut NodeContext) {
        ctx.set_timer(TimerKind::Produce, self.source_period);
    }

    fn on_queue(&mut self, ctx: &mut NodeContext, command: Command) {
        self.batch.push(command);
        if self.batch.len() as u32 >= self.batch_size {
            self.flush(ctx);
        } else if self.batch.len() == 1 {
            ctx.set_timer(TimerKind::Batch, self.batch_timeout);
        }
    }

    fn on_tuple(
        &mut self,
        _ctx: &mut NodeContext,
        _stream: StreamKind,
        _partition: Option<u32>,
        _tuple: Tuple,
    ) {
    }

    fn on_timer(&mut self, ctx: &mut NodeContext, timer: TimerKind) {
        match timer {
            TimerKind::Batch => self.flush(ctx),
            TimerKind::Produce => {
                // Retransmit overdue in-flight requests, doubling their
                // backoff so long-unstable requests do not flood the system.
                let ledger = ctx.store.source_ledger(ctx.instance);
                let due: Vec<(RequestNumber, Request)> = ledger
                    .pending
                    .iter()
                    .filter(|(number, _)| match self.flights.get(number) {
                        Some(fl) => ctx.now.saturating_sub(fl.last_sent) >= fl.timeout,
                        None => true,
                    })
                    .map(|(n, req)| (*n, req.clone()))
                    .collect();
                for (number, request) in due {
                    let timeout = self
                        .flights
                        .get(&number)
                        .map(|fl| (fl.timeout * 2).min(self.retransmit_timeout * 8))
                        .unwrap_or(self.retransmit_timeout);
                    self.send(ctx, request);
                    self.flights.get_mut(&number).unwrap().timeout = timeout;
                }
                if self
                    .last_target
                    .is_none_or(|t| ctx.now.saturating_sub(t) >= self.target_period)
                {
                    self.emit_target(ctx);
                }
                ctx.set_timer(TimerKind::Produce, self.source_period);
            }
            _ => {}
        }
    }

    fn on_ack(&mut self, ctx: &mut NodeContext, number: RequestNumber) {
        let ledger = ctx.store.source_ledger(ctx.instance);
        ledger.pending.remove(&number);
        self.flights.remove(&number);
    }

    fn state_digest(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(self.batch.len() as u64).to_le_bytes());
        for c in &self.batch {
            bytes.extend_from_slice(&c.id.client.to_le_bytes());
            bytes.extend_from_slice(&c.id.timestamp.to_le_bytes());
        }
        for (n, fl) in &self.flights {
            bytes.extend_from_slice(&n.to_le_bytes());
            bytes.extend_from_slice(&fl.last_sent.to_le_bytes());
        }
        fnv64(&bytes)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
