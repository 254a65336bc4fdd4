//! Run metrics: throughput series, latency stats, protocol counters.

use std::collections::BTreeMap;

use crate::messages::{Seq, ViewNumber};
use crate::sim::audit::AuditLog;
use crate::sim::event::Tick;

/// Commands first executed in one span of ticks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThroughputBucket {
    /// First tick covered by the bucket.
    pub start: Tick,
    /// Commands whose first execution fell inside the bucket.
    pub commands: u64,
}

/// Percentile summary over completed-operation latencies, in ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    pub p50: u64,
    pub p95: u64,
    pub p99: u64,
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<u64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        let count = samples.len();
        let sum: u128 = samples.iter().map(|&v| v as u128).sum();
        let pick = |q: f64| samples[(((count - 1) as f64) * q).round() as usize];
        Some(LatencyStats {
            count,
            min: samples[0],
            max: samples[count - 1],
            mean: sum as f64 / count as f64,
            p50: pick(0.50),
            p95: pick(0.95),
            p99: pick(0.99),
        })
    }
}

/// Everything measurable about one finished run.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub issued: u64,
    pub completed: u64,
    pub retransmits: u64,
    pub latency: Option<LatencyStats>,
    pub bucket_width: Tick,
    pub throughput: Vec<ThroughputBucket>,
    /// Distinct commands that reached execution at least once.
    pub executed_commands: u64,
    /// Slots filled with no-ops rather than client work.
    pub noop_slots: u64,
    /// Stall-triggered view announcements recorded by controllers.
    pub view_announcements: usize,
    /// Highest view any controller announced.
    pub max_view: ViewNumber,
    pub checkpoints_written: usize,
    /// Highest stability threshold any source announced.
    pub stable_frontier: Seq,
}

impl Metrics {
    pub fn collect(
        audit: &AuditLog,
        issued: u64,
        completed: u64,
        retransmits: u64,
        latencies: Vec<u64>,
        duration: Tick,
        bucket_width: Tick,
    ) -> Metrics {
        let width = bucket_width.max(1);

        // First execution tick per merged sequence; the same slot shows up
        // once per executor, so keep the earliest.
        let mut first_exec: BTreeMap<Seq, (Tick, u64, bool)> = BTreeMap::new();
        for rec in &audit.executions {
            let commands = rec.request.commands.len() as u64;
            let noop = rec.request.is_noop();
            first_exec
                .entry(rec.sequence)
                .and_modify(|e| e.0 = e.0.min(rec.tick))
                .or_insert((rec.tick, commands, noop));
        }

        let buckets = (duration / width + 1) as usize;
        let mut throughput: Vec<ThroughputBucket> = (0..buckets)
            .map(|i| ThroughputBucket {
                start: i as Tick * width,
                commands: 0,
            })
            .collect();
        let mut executed_commands = 0u64;
        let mut noop_slots = 0u64;
        for (tick, commands, noop) in first_exec.values() {
            if *noop {
                noop_slots += 1;
                continue;
            }
            executed_commands += commands;
            let idx = (tick / width) as usize;
            if let Some(b) = throughput.get_mut(idx) {
                b.commands += commands;
            }
        }
        while throughput.last().is_some_and(|b| b.commands == 0) && throughput.len() > 1 {
            throughput.pop();
        }

        Metrics {
            issued,
            completed,
            retransmits,
            latency: LatencyStats::from_samples(latencies),
            bucket_width: width,
            throughput,
            executed_commands,
            noop_slots,
            view_announcements: audit.view_announces.len(),
            max_view: audit
                .view_announces
                .iter()
                .map(|v| v.view)
                .max()
                .unwrap_or(0),
            checkpoints_written: audit.checkpoints.len(),
            stable_frontier: audit
                .stables
                .iter()
                .map(|s| s.stable_sequence)
                .max()
                .unwrap_or(-1),
        }
    }

    /// Tab-separated `start<TAB>commands` rows, one per bucket.
    pub fn throughput_tsv(&self) -> String {
        let mut out = String::from("start\tcommands\n");
        for b in &self.throughput {
            out.push_str(&format!("{}\t{}\n", b.start, b.commands));
        }
        out
    }

    /// Human-readable multi-line summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "operations: issued={} completed={} retransmits={}\n",
            self.issued, self.completed, self.retransmits
        ));
        match &self.latency {
            Some(l) => out.push_str(&format!(
                "latency (ticks): n={} min={} p50={} p95={} p99={} max={} mean={:.1}\n",
                l.count, l.min, l.p50, l.p95, l.p99, l.max, l.mean
            )),
            None => out.push_str("latency: no completed operations\n"),
        }
        out.push_str(&format!(
            "execution: commands={} noop_slots={} checkpoints={} stable_frontier={}\n",
            self.executed_commands, self.noop_slots, self.checkpoints_written, self.stable_frontier
        ));
        out.push_str(&format!(
            "views: announcements={} max_view={}\n",
            self.view_announcements, self.max_view
        ));
        out
    }
}
