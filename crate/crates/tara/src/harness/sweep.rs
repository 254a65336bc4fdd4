//! Parallel seed sweeps with randomized tolerable fault schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{FaultAction, FaultEvent, ScenarioConfig};
use crate::harness::scenario::run_scenario_with_budget;
use crate::topology::build_topology;

/// One swept run, with the trace discarded.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub seed: u64,
    pub faults: Vec<FaultEvent>,
    pub completed: u64,
    pub max_view: u64,
    pub healthy: bool,
    /// Names and details of everything that went wrong; empty when healthy.
    pub failures: Vec<String>,
}

impl SweepOutcome {
    pub fn line(&self) -> String {
        let faults = if self.faults.is_empty() {
            "none".to_string()
        } else {
            self.faults
                .iter()
                .map(|f| {
                    format!(
                        "{}@{}{}",
                        f.node,
                        f.at,
                        if f.permanent { " (permanent)" } else { "" }
                    )
                })
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "seed {:>4}  completed {:>6}  max_view {:>3}  {}  faults: {}",
            self.seed,
            self.completed,
            self.max_view,
            if self.healthy { "ok  " } else { "FAIL" },
            faults
        )
    }
}

/// Draws a tolerable fault schedule: at most `f` crashes, each in a distinct
/// stage, timed early enough that the run can demonstrate recovery.
pub fn random_faults(cfg: &ScenarioConfig, seed: u64) -> Vec<FaultEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfa17_5eed_0000_0000);
    let topo = build_topology(cfg.f, cfg.partitions);
    let mut stages: Vec<usize> = (0..topo.stages().len()).collect();
    // Partial shuffle: pick without replacement.
    let count = rng.gen_range(1..=cfg.f.max(1) as usize);
    let mut faults = Vec::new();
    let lo = cfg.gst + cfg.duration / 8;
    let hi = (cfg.duration / 2).max(lo + 1);
    for _ in 0..count.min(stages.len()) {
        let pick = rng.gen_range(0..stages.len());
        let stage_id = stages.swap_remove(pick);
        let stage = topo.stage(stage_id);
        let instance = rng.gen_range(0..stage.instances);
        faults.push(FaultEvent {
            at: rng.gen_range(lo..hi),
            node: format!("{}:{}", stage.name, instance),
            action: FaultAction::Crash,
            permanent: rng.gen_bool(0.3),
        });
    }
    faults
}

/// Runs `base` under each seed in parallel; optionally layering a randomized
/// tolerable fault schedule onto each run.
pub fn sweep(
    base: &ScenarioConfig,
    seeds: std::ops::Range<u64>,
    inject_faults: bool,
    budget: u64,
) -> Vec<SweepOutcome> {
    seeds
        .into_par_iter()
        .map(|seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            if inject_faults {
                cfg.faults.extend(random_faults(&cfg, seed));
            }
            let faults = cfg.faults.clone();
            match run_scenario_with_budget(&cfg, budget) {
                Ok(report) => {
                    let mut failures: Vec<String> = report
                        .safety
                        .failures()
                        .iter()
                        .map(|c| format!("{}: {}", c.name, c.detail))
                        .collect();
                    if let crate::harness::linearizability::Verdict::Violation { detail } =
                        &report.linearizability
                    {
                        failures.push(format!("linearizability: {detail}"));
                    }
                    if report.metrics.completed == 0 {
                        failures.push("liveness: zero completed operations".into());
                    }
                    SweepOutcome {
                        seed,
                        faults,
                        completed: report.metrics.completed,
                        max_view: report.metrics.max_view,
                        healthy: failures.is_empty(),
                        failures,
                    }
                }
                Err(e) => SweepOutcome {
                    seed,
                    faults,
                    completed: 0,
                    max_view: 0,
                    healthy: false,
                    failures: vec![format!("topology: {e}")],
                },
            }
        })
        .collect()
}
