//! One-call scenario execution: run, measure, audit, check.

use crate::client::{ClientManager, OpSpan};
use crate::config::ScenarioConfig;
use crate::harness::audit::{self, SafetyReport};
use crate::harness::linearizability::{self, Verdict};
use crate::harness::metrics::Metrics;
use crate::nodes;
use crate::sim::event::Tick;
use crate::sim::Simulator;
use crate::topology::TopologyError;

/// Width of the throughput buckets, in ticks.
pub const METRIC_BUCKET: Tick = 100;

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub final_tick: Tick,
    pub metrics: Metrics,
    pub safety: SafetyReport,
    pub linearizability: Verdict,
    pub spans: Vec<OpSpan>,
    pub trace: Vec<String>,
}

impl RunReport {
    /// True when no safety check failed and the history has a legal
    /// linearization (or the search was inconclusive, which is not proof
    /// of a violation).
    pub fn healthy(&self) -> bool {
        self.safety.passed() && !self.linearizability.is_violation()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "run: {} ticks, f={}, partitions={}, seed={}\n",
            self.final_tick, self.config.f, self.config.partitions, self.config.seed
        ));
        out.push_str(&self.metrics.summary());
        out.push_str(&format!(
            "linearizability: {}\n",
            describe(&self.linearizability)
        ));
        out.push_str("safety checks:\n");
        out.push_str(&self.safety.summary());
        out
    }
}

fn describe(v: &Verdict) -> String {
    match v {
        Verdict::Linearizable {
            operations,
            dropped_incomplete,
        } => {
            format!("ok ({operations} operations, {dropped_incomplete} unresolved writes dropped)")
        }
        Verdict::Violation { detail } => format!("VIOLATION: {detail}"),
        Verdict::Inconclusive { explored } => {
            format!("inconclusive after {explored} search steps")
        }
    }
}

/// Runs one scenario to completion and evaluates it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, TopologyError> {
    run_scenario_with_budget(cfg, linearizability::DEFAULT_BUDGET)
}

/// Same, with an explicit linearizability search budget.
pub fn run_scenario_with_budget(
    cfg: &ScenarioConfig,
    budget: u64,
) -> Result<RunReport, TopologyError> {
    let world = ClientManager::new(cfg);
    let mut sim = Simulator::new(cfg.clone(), nodes::factory(), world)?;
    sim.run();

    let spans = sim.world().spans().to_vec();
    let metrics = Metrics::collect(
        sim.audit(),
        sim.world().issued(),
        sim.world().completed(),
        sim.world().retransmits(),
        sim.world().latencies(),
        cfg.duration,
        METRIC_BUCKET,
    );
    let safety = audit::evaluate(cfg, sim.audit(), &spans);
    let linearizability = linearizability::check(&spans, budget);
    let final_tick = sim.now();
    let trace = sim.take_trace();

    Ok(RunReport {
        config: cfg.clone(),
        final_tick,
        metrics,
        safety,
        linearizability,
        spans,
        trace,
    })
}
