//! Post-run safety checks over the audit log, plus a trace-file audit.
//!
//! The simulator collects ground-truth records (proposes, commits,
//! executions, applies, checkpoints, stability and view announcements)
//! as nodes act. After a run these checks hold that record against the
//! protocol's safety obligations. They are independent of the node
//! implementations: everything here is recomputed from the records.

use std::collections::{BTreeMap, BTreeSet};

use crate::client::OpSpan;
use crate::config::ScenarioConfig;
use crate::messages::{CommandId, Seq};
use crate::nodes::feedback::active_proposer;
use crate::sim::audit::AuditLog;

/// One named check with its outcome.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Every check, in a fixed order.
#[derive(Debug, Clone)]
pub struct SafetyReport {
    pub checks: Vec<CheckResult>,
}

impl SafetyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let mark = if c.passed { "ok " } else { "FAIL" };
            out.push_str(&format!("{mark}  {:<28} {}\n", c.name, c.detail));
        }
        out
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

/// Runs every safety check against one finished run.
pub fn evaluate(cfg: &ScenarioConfig, audit: &AuditLog, spans: &[OpSpan]) -> SafetyReport {
    let mut checks = Vec::new();

    // 1. Nodes flagged no protocol violations while running.
    checks.push(check(
        "runtime_violations",
        audit.violations.is_empty(),
        if audit.violations.is_empty() {
            "none".into()
        } else {
            format!(
                "{} violations, first: [{}] {}",
                audit.violations.len(),
                audit.violations[0].tick,
                audit.violations[0].message
            )
        },
    ));

    // 2. All executors executed the same request at the same position.
    let mut by_seq: BTreeMap<Seq, &crate::messages::Request> = BTreeMap::new();
    let mut agreement_fail = None;
    for rec in &audit.executions {
        match by_seq.get(&rec.sequence) {
            None => {
                by_seq.insert(rec.sequence, &rec.request);
            }
            Some(prev) if **prev != rec.request => {
                agreement_fail.get_or_insert(format!(
                    "position {} executed with two different requests (digests {} vs {})",
                    rec.sequence,
                    prev.digest(),
                    rec.request.digest()
                ));
            }
            Some(_) => {}
        }
    }
    checks.push(check(
        "execution_agreement",
        agreement_fail.is_none(),
        agreement_fail.unwrap_or_else(|| format!("{} distinct positions", by_seq.len())),
    ));

    // 3. Executed positions form a gap-free prefix across the replica group.
    let max_exec = by_seq.keys().next_back().copied().unwrap_or(-1);
    let covered = by_seq.len() as i64 == max_exec + 1;
    checks.push(check(
        "execution_coverage",
        covered,
        if covered {
            format!("positions 0..={max_exec} all executed somewhere")
        } else {
            let missing = (0..=max_exec)
                .find(|s| !by_seq.contains_key(s))
                .unwrap_or(-1);
            format!("position {missing} executed nowhere, yet {max_exec} was")
        },
    ));

    // 4. A command's effect lands at exactly one position. Replicas may
    //    legitimately re-apply a command when re-executing rolled-back
    //    positions after a restart, but those re-applies hit the same
    //    position; a fresh apply at a second position is a double effect.
    let mut fresh_slots: BTreeMap<CommandId, BTreeSet<Seq>> = BTreeMap::new();
    for rec in &audit.applies {
        if rec.fresh {
            fresh_slots
                .entry(rec.command)
                .or_default()
                .insert(rec.sequence);
        }
    }
    let dup = fresh_slots.iter().find(|(_, slots)| slots.len() > 1);
    checks.push(check(
        "exactly_once_apply",
        dup.is_none(),
        match dup {
            Some((cmd, slots)) => format!(
                "client {} ts {} took effect at {} distinct positions: {:?}",
                cmd.client,
                cmd.timestamp,
                slots.len(),
                slots
            ),
            None => format!("{} commands applied", fresh_slots.len()),
        },
    ));
    let fresh_any: BTreeSet<CommandId> = fresh_slots.keys().copied().collect();

    // 5. Every operation a client saw complete really was applied somewhere.
    let unapplied = spans.iter().filter(|s| s.completed_at.is_some()).find(|s| {
        !fresh_any.contains(&CommandId {
            client: s.client,
            timestamp: s.timestamp,
        })
    });
    checks.push(check(
        "completed_implies_applied",
        unapplied.is_none(),
        match unapplied {
            Some(s) => format!(
                "client {} ts {} completed but no executor applied it",
                s.client, s.timestamp
            ),
            None => format!(
                "{} completed operations all applied",
                spans.iter().filter(|s| s.completed_at.is_some()).count()
            ),
        },
    ));

    // 6. Only the view's designated proposer proposed, and a slot never
    //    carried two different requests within one view.
    let mut proposer_fail = None;
    let mut slot_requests: BTreeMap<(u32, u64, Seq), String> = BTreeMap::new();
    for rec in &audit.proposes {
        if rec.proposer != active_proposer(rec.view, cfg.f) {
            proposer_fail.get_or_insert(format!(
                "partition {} view {}: instance {} proposed but {} owns the view",
                rec.partition,
                rec.view,
                rec.proposer,
                active_proposer(rec.view, cfg.f)
            ));
        }
        let digest = rec.request.digest();
        match slot_requests.entry((rec.partition, rec.view, rec.sequence)) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(digest);
            }
            std::collections::btree_map::Entry::Occupied(o) => {
                if *o.get() != digest {
                    proposer_fail.get_or_insert(format!(
                        "partition {} view {} slot {}: two different requests proposed",
                        rec.partition, rec.view, rec.sequence
                    ));
                }
            }
        }
    }
    checks.push(check(
        "proposal_discipline",
        proposer_fail.is_none(),
        proposer_fail.unwrap_or_else(|| format!("{} proposals", audit.proposes.len())),
    ));

    // 7. Every commit acknowledges a request that was really proposed in
    //    that partition, view and slot.
    let orphan = audit.commits.iter().find(|c| {
        let digest = c.request.digest();
        slot_requests.get(&(c.partition, c.view, c.sequence)) != Some(&digest)
    });
    checks.push(check(
        "commit_matches_propose",
        orphan.is_none(),
        match orphan {
            Some(c) => format!(
                "partition {} view {} slot {}: commit without matching propose",
                c.partition, c.view, c.sequence
            ),
            None => format!("{} commits", audit.commits.len()),
        },
    ));

    // 8. Checkpoint labels sit at interval boundaries: the blob written
    //    after position s covers 0..=s, taken just before crossing into the
    //    next interval, so s+1 is a positive multiple of the interval.
    let cp = cfg.checkpoint_interval as Seq;
    let bad_cp = audit
        .checkpoints
        .iter()
        .find(|c| c.sequence < 0 || (c.sequence + 1) % cp != 0);
    checks.push(check(
        "checkpoint_labels",
        bad_cp.is_none(),
        match bad_cp {
            Some(c) => format!("label {} not at an interval-{cp} boundary", c.sequence),
            None => format!("{} checkpoint writes", audit.checkpoints.len()),
        },
    ));

    // 9. Stability never outran durability: a threshold needs a checkpoint
    //    at that exact label.
    let labels: BTreeSet<Seq> = audit.checkpoints.iter().map(|c| c.sequence).collect();
    let bad_stable = audit
        .stables
        .iter()
        .find(|s| s.stable_sequence >= 0 && !labels.contains(&s.stable_sequence));
    checks.push(check(
        "stability_backed",
        bad_stable.is_none(),
        match bad_stable {
            Some(s) => format!(
                "threshold {} announced without a checkpoint at that label",
                s.stable_sequence
            ),
            None => format!(
                "max threshold {}",
                audit
                    .stables
                    .iter()
                    .map(|s| s.stable_sequence)
                    .max()
                    .unwrap_or(-1)
            ),
        },
    ));

    // 10. Bounded memory: per-stage occupancy peaks against the window.
    //     Committers hold at most the window. Proposers and executors may
    //     transiently exceed it while stability news propagates, bounded by
    //     one checkpoint interval of skew.
    let w = cfg.window as usize;
    let skew = cfg.checkpoint_interval as usize;
    let p = cfg.partitions as usize;
    let mut window_fail = None;
    for ((stage, instance), peak) in &audit.window_peaks {
        let bound = if stage.starts_with("committer") {
            w
        } else if stage.starts_with("proposer") {
            w + skew + 1
        } else if stage.starts_with("executor") {
            2 * p * (w + skew)
        } else {
            continue;
        };
        if *peak > bound {
            window_fail.get_or_insert(format!(
                "{stage}:{instance} peaked at {peak}, bound {bound}"
            ));
        }
    }
    checks.push(check(
        "window_bounds",
        window_fail.is_none(),
        window_fail.unwrap_or_else(|| {
            format!(
                "max peak {}",
                audit.window_peaks.values().max().copied().unwrap_or(0)
            )
        }),
    ));

    SafetyReport { checks }
}

/// Safety checks recomputable from a trace file alone.
///
/// The trace records every delivery as `tick<TAB>deliver<TAB>node<TAB>`
/// `LABEL|summary`. Propose summaries carry proposer, slot, view and request
/// digest, which is enough to re-verify proposal discipline. Deliveries are
/// not ordered per link (the network reorders), so the stability check is
/// order-free: no announced threshold may exceed the highest checkpoint
/// label ever written.
pub fn audit_trace(lines: &[String], f: u32) -> SafetyReport {
    let mut checks = Vec::new();
    let mut parse_errors = 0usize;
    let mut proposer_fail: Option<String> = None;
    let mut slot_requests: BTreeMap<(String, u64, i64), String> = BTreeMap::new();
    let mut max_stable: i64 = -1;
    let mut max_checkpoint: i64 = -1;
    let mut proposes = 0usize;
    let mut stables = 0usize;

    for line in lines {
        let mut cols = line.split('\t');
        let (Some(_tick), Some(kind), Some(_node), Some(payload)) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            parse_errors += 1;
            continue;
        };
        if kind != "deliver" {
            continue;
        }
        let Some((label, summary)) = payload.split_once('|') else {
            parse_errors += 1;
            continue;
        };
        let fields: Vec<&str> = summary.split(';').collect();
        if label.starts_with("PROPOSE") && fields.first() == Some(&"propose") {
            // propose;<proposer>;<slot>;<view>;<digest>
            let (Some(prop), Some(slot), Some(view)) = (
                fields.get(1).and_then(|s| s.parse::<u32>().ok()),
                fields.get(2).and_then(|s| s.parse::<i64>().ok()),
                fields.get(3).and_then(|s| s.parse::<u64>().ok()),
            ) else {
                parse_errors += 1;
                continue;
            };
            let digest = fields.get(4).copied().unwrap_or("").to_string();
            let partition = label.split('@').nth(1).unwrap_or("p?").to_string();
            proposes += 1;
            if prop != active_proposer(view, f) {
                proposer_fail.get_or_insert(format!(
                    "{partition} view {view}: proposer {prop} is not the designated instance"
                ));
            }
            match slot_requests.entry((partition.clone(), view, slot)) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(digest);
                }
                std::collections::btree_map::Entry::Occupied(o) => {
                    if *o.get() != digest {
                        proposer_fail.get_or_insert(format!(
                            "{partition} view {view} slot {slot}: two different requests"
                        ));
                    }
                }
            }
        } else if label.starts_with("STABLE") && fields.first() == Some(&"stable") {
            // stable;<source>;<threshold>
            let Some(thr) = fields.get(2).and_then(|s| s.parse::<i64>().ok()) else {
                parse_errors += 1;
                continue;
            };
            stables += 1;
            max_stable = max_stable.max(thr);
        } else if label.starts_with("CHECKPOINT") && fields.first() == Some(&"checkpoint") {
            // checkpoint;<executor>;<label>
            let Some(seq) = fields.get(2).and_then(|s| s.parse::<i64>().ok()) else {
                parse_errors += 1;
                continue;
            };
            max_checkpoint = max_checkpoint.max(seq);
        }
    }

    checks.push(check(
        "trace_parse",
        parse_errors == 0,
        format!("{} lines, {parse_errors} malformed", lines.len()),
    ));
    checks.push(check(
        "proposal_discipline",
        proposer_fail.is_none(),
        proposer_fail.unwrap_or_else(|| format!("{proposes} propose deliveries")),
    ));
    let backed = max_stable <= max_checkpoint || max_stable < 0;
    checks.push(check(
        "stability_backed",
        backed,
        if backed {
            format!("{stables} stability deliveries, max threshold {max_stable}, max checkpoint {max_checkpoint}")
        } else {
            format!("threshold {max_stable} announced beyond the highest checkpoint {max_checkpoint}")
        },
    ));
    SafetyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_audit_flags_rogue_proposer() {
        let good = vec![
            "5\tdeliver\tcommitter/p0:1\tPROPOSE@p0|propose;0;0;0;abcd".to_string(),
            "9\tdeliver\tcommitter/p0:1\tPROPOSE@p0|propose;1;1;1;ffff".to_string(),
        ];
        assert!(audit_trace(&good, 1).passed());

        let rogue = vec!["5\tdeliver\tcommitter/p0:1\tPROPOSE@p0|propose;1;0;0;abcd".to_string()];
        let report = audit_trace(&rogue, 1);
        assert!(!report.passed());
        assert_eq!(report.failures()[0].name, "proposal_discipline");
    }

    #[test]
    fn trace_audit_flags_equivocating_slot() {
        let lines = vec![
            "5\tdeliver\tcommitter/p0:1\tPROPOSE@p0|propose;0;3;0;aaaa".to_string(),
            "6\tdeliver\tcommitter/p0:2\tPROPOSE@p0|propose;0;3;0;bbbb".to_string(),
        ];
        assert!(!audit_trace(&lines, 1).passed());
    }

    #[test]
    fn trace_audit_flags_unbacked_threshold() {
        // A threshold at 200 with only a checkpoint at 100 on record claims
        // stability for state nobody persisted.
        let lines = vec![
            "5\tdeliver\tgc_sink:0\tCHECKPOINT|checkpoint;0;100".to_string(),
            "9\tdeliver\tproposer/p0:0\tSTABLE|stable;0;200".to_string(),
        ];
        let report = audit_trace(&lines, 1);
        assert!(!report.passed());
        assert_eq!(report.failures()[0].name, "stability_backed");

        // Reordered deliveries of real values stay legal.
        let reordered = vec![
            "5\tdeliver\tgc_sink:0\tCHECKPOINT|checkpoint;0;200".to_string(),
            "6\tdeliver\tproposer/p0:0\tSTABLE|stable;0;200".to_string(),
            "7\tdeliver\tproposer/p0:0\tSTABLE|stable;0;100".to_string(),
        ];
        assert!(audit_trace(&reordered, 1).passed());
    }
}
