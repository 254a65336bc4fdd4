//! Partially synchronous network model.
//!
//! Before the synchrony tick deliveries may be lost, duplicated, heavily
//! delayed, or blocked by scheduled link outages. From the synchrony tick on,
//! loss stops and delays shrink to the configured steady-state bound; this is
//! what makes progress provable after that point.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;

use super::event::Tick;

/// A link outage resolved to node indices; blocks both directions.
#[derive(Debug, Clone)]
pub struct ResolvedBlock {
    pub from_tick: Tick,
    pub until_tick: Tick,
    pub a: usize,
    pub b: usize,
}

pub struct NetworkModel {
    cfg: NetworkConfig,
    gst: Tick,
    blocks: Vec<ResolvedBlock>,
    rng: ChaCha8Rng,
}

impl NetworkModel {
    pub fn new(cfg: NetworkConfig, gst: Tick, blocks: Vec<ResolvedBlock>, seed: u64) -> Self {
        NetworkModel {
            cfg,
            gst,
            blocks,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x006e_6574_776f_726b_u64),
        }
    }

    fn blocked(&self, now: Tick, pair: Option<(usize, usize)>) -> bool {
        let Some((x, y)) = pair else { return false };
        self.blocks.iter().any(|b| {
            now >= b.from_tick
                && now < b.until_tick
                && ((b.a == x && b.b == y) || (b.a == y && b.b == x))
        })
    }

    /// Decides the arrival ticks for one delivery attempt. Empty means the
    /// attempt was lost or blocked; two entries mean duplication. `pair` is
    /// (from, to) node indices when both endpoints are topology nodes.
    pub fn sample(&mut self, now: Tick, pair: Option<(usize, usize)>) -> Vec<Tick> {
        if self.blocked(now, pair) {
            return Vec::new();
        }
        let synchronous = now >= self.gst;
        let max_delay = if synchronous {
            self.cfg.delay_max
        } else {
            self.cfg.pre_gst_delay_max
        };
        let mut arrivals = Vec::new();
        let lost = !synchronous && self.cfg.loss > 0.0 && self.rng.gen::<f64>() < self.cfg.loss;
        if !lost {
            arrivals.push(now + self.rng.gen_range(self.cfg.delay_min..=max_delay));
        }
        if self.cfg.duplication > 0.0 && self.rng.gen::<f64>() < self.cfg.duplication {
            arrivals.push(now + self.rng.gen_range(self.cfg.delay_min..=max_delay));
        }
        arrivals
    }
}
