//! Linearizability checking for completed client operations.
//!
//! The store is a key-value map, and every operation touches a single key, so
//! a history is linearizable exactly when each per-key subhistory is. Each key
//! is checked independently with a depth-first search over linearization
//! orders, memoized on (linearized-set, key state).
//!
//! Operations that never completed may or may not have taken effect; the
//! search is free to linearize them anywhere after their invocation or to
//! drop them entirely.

use std::collections::{BTreeMap, HashSet};

use crate::app::KvOp;
use crate::app::KvResult;
use crate::client::OpSpan;
use crate::sim::event::Tick;

/// Exploration budget spent across all keys before giving up.
pub const DEFAULT_BUDGET: u64 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// A legal linearization exists for every key.
    Linearizable {
        operations: usize,
        dropped_incomplete: usize,
    },
    /// No legal linearization exists; real-time order contradicts results.
    Violation { detail: String },
    /// The search budget ran out before a verdict.
    Inconclusive { explored: u64 },
}

impl Verdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Violation { .. })
    }
}

/// One operation restricted to a single key.
#[derive(Debug, Clone)]
struct Entry {
    kind: OpKind,
    invoked: Tick,
    /// `None` marks an operation with no observed completion.
    returned: Option<Tick>,
    result: Option<KvResult>,
    client: u64,
    timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum OpKind {
    Put(Vec<u8>),
    Get,
    Delete,
}

fn apply(state: &Option<Vec<u8>>, kind: &OpKind) -> (Option<Vec<u8>>, KvResult) {
    match kind {
        OpKind::Put(v) => (Some(v.clone()), KvResult::Ok),
        OpKind::Delete => (None, KvResult::Ok),
        OpKind::Get => match state {
            Some(v) => (state.clone(), KvResult::Value(v.clone())),
            None => (None, KvResult::Absent),
        },
    }
}

/// Memo key: which operations are already linearized, plus the value the
/// key holds at that point.
type Visited = (Box<[u64]>, Option<Vec<u8>>);

struct KeySearch<'a> {
    entries: &'a [Entry],
    completed_total: usize,
    seen: HashSet<Visited>,
    explored: u64,
    budget: u64,
}

enum KeyOutcome {
    Ok { dropped: usize },
    Fail,
    Budget,
}

impl<'a> KeySearch<'a> {
    fn mask_words(&self) -> usize {
        self.entries.len().div_ceil(64)
    }

    fn run(&mut self) -> KeyOutcome {
        let words = self.mask_words().max(1);
        let mask = vec![0u64; words];
        self.dfs(&mask, &None, 0)
    }

    fn dfs(
        &mut self,
        mask: &[u64],
        state: &Option<Vec<u8>>,
        linearized_completed: usize,
    ) -> KeyOutcome {
        if linearized_completed == self.completed_total {
            let dropped = self
                .entries
                .iter()
                .enumerate()
                .filter(|(i, e)| e.returned.is_none() && !bit(mask, *i))
                .count();
            return KeyOutcome::Ok { dropped };
        }
        self.explored += 1;
        if self.explored > self.budget {
            return KeyOutcome::Budget;
        }
        if !self
            .seen
            .insert((mask.to_vec().into_boxed_slice(), state.clone()))
        {
            return KeyOutcome::Fail;
        }

        // An operation may be linearized next only if no other pending
        // operation finished before it was invoked.
        let min_return = self
            .entries
            .iter()
            .enumerate()
            .filter(|(i, e)| !bit(mask, *i) && e.returned.is_some())
            .map(|(_, e)| e.returned.unwrap())
            .min()
            .unwrap_or(Tick::MAX);

        for (i, e) in self.entries.iter().enumerate() {
            if bit(mask, i) || e.invoked > min_return {
                continue;
            }
            let (next_state, expected) = apply(state, &e.kind);
            let advanced = match (&e.returned, &e.result) {
                (Some(_), Some(observed)) => {
                    if *observed != expected {
                        continue;
                    }
                    1
                }
                (Some(_), None) => continue, // completed without a result: unmatchable
                (None, _) => 0,
            };
            let mut next_mask = mask.to_vec();
            set_bit(&mut next_mask, i);
            match self.dfs(&next_mask, &next_state, linearized_completed + advanced) {
                KeyOutcome::Fail => {}
                done => return done,
            }
        }
        KeyOutcome::Fail
    }
}

fn bit(mask: &[u64], i: usize) -> bool {
    mask[i / 64] >> (i % 64) & 1 == 1
}

fn set_bit(mask: &mut [u64], i: usize) {
    mask[i / 64] |= 1 << (i % 64);
}

fn op_key(op: &KvOp) -> &[u8] {
    match op {
        KvOp::Put { key, .. } | KvOp::Get { key } | KvOp::Delete { key } => key,
    }
}

fn op_kind(op: &KvOp) -> OpKind {
    match op {
        KvOp::Put { value, .. } => OpKind::Put(value.clone()),
        KvOp::Get { .. } => OpKind::Get,
        KvOp::Delete { .. } => OpKind::Delete,
    }
}

/// Checks the whole history, spending at most `budget` search steps.
pub fn check(spans: &[OpSpan], budget: u64) -> Verdict {
    let mut by_key: BTreeMap<Vec<u8>, Vec<Entry>> = BTreeMap::new();
    let mut operations = 0usize;
    for span in spans {
        // An unfinished read neither constrains nor changes anything.
        if span.completed_at.is_none() && matches!(span.op, KvOp::Get { .. }) {
            continue;
        }
        by_key
            .entry(op_key(&span.op).to_vec())
            .or_default()
            .push(Entry {
                kind: op_kind(&span.op),
                invoked: span.invoked_at,
                returned: span.completed_at,
                result: span.result.clone(),
                client: span.client,
                timestamp: span.timestamp,
            });
        operations += 1;
    }

    let mut explored_total = 0u64;
    let mut dropped_total = 0usize;
    for (key, mut entries) in by_key {
        entries.sort_by_key(|e| (e.invoked, e.returned.unwrap_or(Tick::MAX)));
        let completed_total = entries.iter().filter(|e| e.returned.is_some()).count();
        let mut search = KeySearch {
            entries: &entries,
            completed_total,
            seen: HashSet::new(),
            explored: 0,
            budget: budget.saturating_sub(explored_total),
        };
        let outcome = search.run();
        explored_total += search.explored;
        match outcome {
            KeyOutcome::Ok { dropped } => dropped_total += dropped,
            KeyOutcome::Budget => {
                return Verdict::Inconclusive {
                    explored: explored_total,
                }
            }
            KeyOutcome::Fail => {
                let culprit = entries
                    .iter()
                    .filter(|e| e.returned.is_some())
                    .min_by_key(|e| e.returned.unwrap())
                    .expect("a failing key has completed operations");
                return Verdict::Violation {
                    detail: format!(
                        "key {:?}: no linearization for {} operations (earliest-completing: client {} ts {} {:?} -> {:?})",
                        String::from_utf8_lossy(&key),
                        entries.len(),
                        culprit.client,
                        culprit.timestamp,
                        culprit.kind,
                        culprit.result,
                    ),
                };
            }
        }
    }
    Verdict::Linearizable {
        operations,
        dropped_incomplete: dropped_total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(
        client: u64,
        ts: u64,
        op: KvOp,
        invoked: Tick,
        completed: Option<Tick>,
        result: Option<KvResult>,
    ) -> OpSpan {
        OpSpan {
            client,
            timestamp: ts,
            op,
            invoked_at: invoked,
            completed_at: completed,
            result,
        }
    }

    fn put(key: &str, value: &str) -> KvOp {
        KvOp::Put {
            key: key.into(),
            value: value.into(),
        }
    }

    fn get(key: &str) -> KvOp {
        KvOp::Get { key: key.into() }
    }

    #[test]
    fn read_after_write_must_observe_the_write() {
        // put finishes at 10; a get invoked at 20 cannot miss it.
        let history = vec![
            span(1, 1, put("k", "v1"), 0, Some(10), Some(KvResult::Ok)),
            span(2, 1, get("k"), 20, Some(30), Some(KvResult::Absent)),
        ];
        assert!(check(&history, DEFAULT_BUDGET).is_violation());
    }

    #[test]
    fn concurrent_read_may_order_either_way() {
        let base = |res| {
            vec![
                span(1, 1, put("k", "v1"), 0, Some(10), Some(KvResult::Ok)),
                span(2, 1, get("k"), 5, Some(8), Some(res)),
            ]
        };
        assert!(!check(&base(KvResult::Absent), DEFAULT_BUDGET).is_violation());
        assert!(!check(&base(KvResult::Value("v1".into())), DEFAULT_BUDGET).is_violation());
    }

    #[test]
    fn unfinished_write_may_take_effect_late_or_never() {
        // The put never completed, yet a later read sees it after an even
        // later read missed it -- legal, because the put may linearize
        // between the two reads.
        let history = vec![
            span(1, 1, put("k", "v1"), 0, None, None),
            span(2, 1, get("k"), 50, Some(60), Some(KvResult::Absent)),
            span(
                2,
                2,
                get("k"),
                70,
                Some(80),
                Some(KvResult::Value("v1".into())),
            ),
        ];
        match check(&history, DEFAULT_BUDGET) {
            Verdict::Linearizable {
                operations,
                dropped_incomplete,
            } => {
                assert_eq!(operations, 3);
                assert_eq!(dropped_incomplete, 0);
            }
            other => panic!("expected linearizable, got {other:?}"),
        }
    }

    #[test]
    fn stale_read_after_overwrite_is_flagged() {
        let history = vec![
            span(1, 1, put("k", "v1"), 0, Some(10), Some(KvResult::Ok)),
            span(2, 1, put("k", "v2"), 20, Some(30), Some(KvResult::Ok)),
            span(
                3,
                1,
                get("k"),
                40,
                Some(50),
                Some(KvResult::Value("v1".into())),
            ),
        ];
        assert!(check(&history, DEFAULT_BUDGET).is_violation());
    }

    #[test]
    fn delete_then_read_absent_is_legal() {
        let history = vec![
            span(1, 1, put("k", "v1"), 0, Some(10), Some(KvResult::Ok)),
            span(
                1,
                2,
                KvOp::Delete { key: "k".into() },
                20,
                Some(30),
                Some(KvResult::Ok),
            ),
            span(2, 1, get("k"), 40, Some(50), Some(KvResult::Absent)),
        ];
        assert!(!check(&history, DEFAULT_BUDGET).is_violation());
    }
}
