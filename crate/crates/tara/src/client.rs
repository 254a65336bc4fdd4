//! Closed-loop workload clients.
//!
//! Each client keeps exactly one command outstanding: issue, wait for the
//! reply, think, issue the next. A client that waits longer than its timeout
//! re-submits the *same* command (same timestamp) through the next request
//! source, so duplicates and failovers exercise the protocol's exactly-once
//! machinery. Every operation's invocation window and observed result are
//! recorded for the linearizability check.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::app::{KvOp, KvResult};
use crate::config::{ScenarioConfig, WorkloadConfig};
use crate::messages::{ClientId, Command, CommandId, ReplicaId, Reply};
use crate::sim::event::Tick;
use crate::sim::{ExternalOps, ExternalWorld};

/// One operation's lifetime as the client saw it.
#[derive(Debug, Clone)]
pub struct OpSpan {
    pub client: ClientId,
    /// Client-local command timestamp; unique per client.
    pub timestamp: u64,
    pub op: KvOp,
    pub invoked_at: Tick,
    /// None while no reply arrived (operation may or may not have taken
    /// effect).
    pub completed_at: Option<Tick>,
    pub result: Option<KvResult>,
}

struct PendingOp {
    command: Command,
    /// Last submission tick; a wake resends only if no newer submission
    /// happened since it was scheduled.
    sent_at: Tick,
    attempt: u32,
}

struct ClientState {
    next_timestamp: u64,
    outstanding: Option<PendingOp>,
    issued: u64,
    rng: ChaCha8Rng,
}

pub struct ClientManager {
    sources: u32,
    workload: WorkloadConfig,
    clients: BTreeMap<ClientId, ClientState>,
    spans: Vec<OpSpan>,
    /// (client, timestamp) -> span index, for completion on reply.
    open: BTreeMap<(ClientId, u64), usize>,
    completed: u64,
    retransmits: u64,
}

impl ClientManager {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let mut clients = BTreeMap::new();
        for c in 0..cfg.workload.clients {
            clients.insert(
                c as ClientId,
                ClientState {
                    next_timestamp: 1,
                    outstanding: None,
                    issued: 0,
                    rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x636c_6965_6e74 ^ (c << 17)),
                },
            );
        }
        ClientManager {
            sources: cfg.f + 1,
            workload: cfg.workload.clone(),
            clients,
            spans: Vec::new(),
            open: BTreeMap::new(),
            completed: 0,
            retransmits: 0,
        }
    }

    pub fn spans(&self) -> &[OpSpan] {
        &self.spans
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn issued(&self) -> u64 {
        self.spans.len() as u64
    }

    pub fn retransmits(&self) -> u64 {
        self.retransmits
    }

    /// Completed-operation latencies in ticks, in completion order.
    pub fn latencies(&self) -> Vec<Tick> {
        self.spans
            .iter()
            .filter_map(|s| s.completed_at.map(|done| done - s.invoked_at))
            .collect()
    }

    fn route(&self, client: ClientId, attempt: u32) -> ReplicaId {
        ((client + attempt as u64) % self.sources as u64) as ReplicaId
    }

    fn mint_op(workload: &WorkloadConfig, rng: &mut ChaCha8Rng, client: ClientId, ts: u64) -> KvOp {
        let key = format!("k{}", rng.gen_range(0..workload.key_space)).into_bytes();
        let total = workload.put_weight + workload.get_weight + workload.delete_weight;
        let roll = rng.gen_range(0..total.max(1));
        if roll < workload.put_weight {
            // Values are unique per (client, timestamp), so reads pin down
            // exactly which write they observed.
            KvOp::Put {
                key,
                value: format!("c{client}-t{ts}").into_bytes(),
            }
        } else if roll < workload.put_weight + workload.get_weight {
            KvOp::Get { key }
        } else {
            KvOp::Delete { key }
        }
    }

    fn issue(&mut self, client: ClientId, now: Tick, ops: &mut ExternalOps) {
        if self.workload.quiesce_tick > 0 && now >= self.workload.quiesce_tick {
            return;
        }
        let timeout = self.workload.client_timeout;
        let Some(state) = self.clients.get_mut(&client) else {
            return;
        };
        if state.outstanding.is_some() {
            return;
        }
        if self.workload.ops_per_client > 0 && state.issued >= self.workload.ops_per_client {
            return;
        }
        let ts = state.next_timestamp;
        state.next_timestamp += 1;
        state.issued += 1;
        let op = Self::mint_op(&self.workload, &mut state.rng, client, ts);
        let command = Command {
            id: CommandId {
                client,
                timestamp: ts,
            },
            op: op.encode(),
        };
        state.outstanding = Some(PendingOp {
            command: command.clone(),
            sent_at: now,
            attempt: 0,
        });
        self.open.insert((client, ts), self.spans.len());
        self.spans.push(OpSpan {
            client,
            timestamp: ts,
            op,
            invoked_at: now,
            completed_at: None,
            result: None,
        });
        let source = self.route(client, 0);
        ops.submit(source, command);
        ops.wake(client, timeout);
    }
}

impl ExternalWorld for ClientManager {
    fn on_start(&mut self, ops: &mut ExternalOps) {
        let ids: Vec<ClientId> = self.clients.keys().copied().collect();
        for client in ids {
            self.issue(client, 0, ops);
        }
    }

    fn on_wake(&mut self, client: ClientId, now: Tick, ops: &mut ExternalOps) {
        let timeout = self.workload.client_timeout;
        let sources = self.sources;
        let Some(state) = self.clients.get_mut(&client) else {
            return;
        };
        match &mut state.outstanding {
            Some(pending) => {
                if now.saturating_sub(pending.sent_at) >= timeout {
                    pending.attempt += 1;
                    pending.sent_at = now;
                    let source =
                        ((client + pending.attempt as u64) % sources as u64) as ReplicaId;
                    let command = pending.command.clone();
                    self.retransmits += 1;
                    ops.submit(source, command);
                    ops.wake(client, timeout);
                }
                // Otherwise a newer submission owns the next wake.
            }
            None => {
                // Think-time wake: time to issue the next command.
                self.issue(client, now, ops);
            }
        }
    }

    fn on_reply(&mut self, client: ClientId, reply: Reply, now: Tick, ops: &mut ExternalOps) {
        let think = self.workload.think_ticks;
        let Some(state) = self.clients.get_mut(&client) else {
            return;
        };
        let matches = state
            .outstanding
            .as_ref()
            .is_some_and(|p| p.command.id.timestamp == reply.command.timestamp);
        if !matches {
            return; // Late or duplicate reply for an already-completed command.
        }
        state.outstanding = None;
        self.completed += 1;
        if let Some(idx) = self.open.remove(&(client, reply.command.timestamp)) {
            let span = &mut self.spans[idx];
            span.completed_at = Some(now);
            span.result = KvResult::decode(&reply.result).ok();
        }
        if think == 0 {
            self.issue(client, now, ops);
        } else {
            ops.wake(client, think);
        }
    }
}
