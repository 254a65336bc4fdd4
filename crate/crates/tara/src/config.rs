//! Scenario configuration: protocol sizing, network model, workload, faults.
//!
//! Configs load from TOML files; every field has a default so a config file
//! only needs to state what differs from the baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("could not parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Minimum delivery delay in ticks.
    pub delay_min: u64,
    /// Maximum delivery delay in ticks once the network is synchronous.
    pub delay_max: u64,
    /// Maximum delivery delay before the synchrony tick; larger values cause
    /// heavier reordering.
    pub pre_gst_delay_max: u64,
    /// Per-delivery loss probability before the synchrony tick.
    pub loss: f64,
    /// Per-delivery duplication probability.
    pub duplication: f64,
    /// Links blocked during tick ranges.
    pub block: Vec<BlockedLink>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            delay_min: 1,
            delay_max: 3,
            pre_gst_delay_max: 3,
            loss: 0.0,
            duplication: 0.0,
            block: Vec::new(),
        }
    }
}

/// A link outage between two nodes, by node path ("stage:index"); blocks
/// both directions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlockedLink {
    pub from_tick: u64,
    pub until_tick: u64,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Closed-loop clients; each keeps exactly one command outstanding.
    pub clients: u64,
    /// Commands per client; 0 means keep issuing until the load window ends.
    pub ops_per_client: u64,
    /// Ticks a client waits for a reply before retrying through the next
    /// front end.
    pub client_timeout: u64,
    /// Ticks a client idles between a reply and its next command.
    pub think_ticks: u64,
    /// Number of distinct keys clients touch.
    pub key_space: u64,
    /// Tick after which clients stop issuing new commands; 0 means load for
    /// the whole run.
    pub quiesce_tick: u64,
    pub put_weight: u32,
    pub get_weight: u32,
    pub delete_weight: u32,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            clients: 4,
            ops_per_client: 0,
            client_timeout: 100,
            think_ticks: 0,
            key_space: 8,
            quiesce_tick: 0,
            put_weight: 5,
            get_weight: 4,
            delete_weight: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TimerConfig {
    /// Cadence of request-source housekeeping (batch timeout checks,
    /// retransmissions).
    pub source_period: u64,
    /// Outstanding-work report period for request sources.
    pub target_period: u64,
    /// Progress report period for executors.
    pub actual_period: u64,
    /// Re-broadcast period for the latest stability threshold and view.
    pub refresh_period: u64,
    /// Ticks before an unacknowledged request is re-emitted.
    pub retransmit_timeout: u64,
    /// Ticks of flat progress before a controller announces a view change.
    pub stall_timeout: u64,
    /// Controller evaluation cadence.
    pub controller_period: u64,
    /// Ticks without outstanding-work reports before a controller stops
    /// tracking a source.
    pub source_expiry: u64,
    /// Retry period while a needed snapshot is unavailable.
    pub catchup_retry: u64,
}

impl Default for TimerConfig {
    fn default() -> Self {
        TimerConfig {
            source_period: 2,
            target_period: 5,
            actual_period: 5,
            refresh_period: 20,
            retransmit_timeout: 50,
            stall_timeout: 150,
            controller_period: 10,
            source_expiry: 400,
            catchup_retry: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    Crash,
    Restart,
}

/// One scheduled fault. Crashes are followed by an automated restart after
/// `restart.delay` ticks unless `permanent` is set or automation is off.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub at: u64,
    /// Node path, e.g. "proposer/p0:1" or "executor:2".
    pub node: String,
    pub action: FaultAction,
    #[serde(default)]
    pub permanent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RestartConfig {
    /// Whether crashed nodes come back automatically.
    pub auto: bool,
    /// Ticks from crash to automated restart.
    pub delay: u64,
}

impl Default for RestartConfig {
    fn default() -> Self {
        RestartConfig {
            auto: true,
            delay: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Tolerated simultaneous crash faults per stage.
    pub f: u32,
    /// Independent consensus partitions.
    pub partitions: u32,
    /// Consensus window size per partition, in sequence numbers.
    pub window: u32,
    /// Checkpoint interval in merged sequence numbers; must not exceed the
    /// window or a full window could never drain.
    pub checkpoint_interval: u32,
    /// Commands per request before a source stops batching; 1 disables
    /// batching.
    pub batch_size: u32,
    /// Ticks after which a partial batch is flushed anyway.
    pub batch_timeout: u64,
    /// New proposals an active proposer may emit per tick; 0 means no cap.
    pub max_proposals_per_tick: u32,
    /// Simulation length in ticks.
    pub duration: u64,
    /// Synchrony tick: loss stops and delays shrink to the post-GST bound
    /// from here on.
    pub gst: u64,
    pub seed: u64,
    /// Marks schedules that intentionally exceed f concurrent crashes in a
    /// stage; disables the schedule validity check.
    pub beyond_f: bool,
    pub network: NetworkConfig,
    pub workload: WorkloadConfig,
    pub timers: TimerConfig,
    pub restart: RestartConfig,
    pub faults: Vec<FaultEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            f: 1,
            partitions: 1,
            window: 128,
            checkpoint_interval: 100,
            batch_size: 1,
            batch_timeout: 5,
            max_proposals_per_tick: 0,
            duration: 2000,
            gst: 0,
            seed: 0,
            beyond_f: false,
            network: NetworkConfig::default(),
            workload: WorkloadConfig::default(),
            timers: TimerConfig::default(),
            restart: RestartConfig::default(),
            faults: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ScenarioConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.partitions == 0 {
            return bad("partitions must be at least 1".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be at least 1".into());
        }
        if self.checkpoint_interval > self.window {
            return bad(format!(
                "checkpoint_interval {} exceeds window {}; a full window could never drain",
                self.checkpoint_interval, self.window
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.duration == 0 {
            return bad("duration must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.network.loss) {
            return bad("network.loss must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.network.duplication) {
            return bad("network.duplication must lie in [0, 1]".into());
        }
        if self.network.delay_min > self.network.delay_max {
            return bad("network.delay_min exceeds delay_max".into());
        }
        if self.network.pre_gst_delay_max < self.network.delay_max {
            return bad("network.pre_gst_delay_max must be at least delay_max".into());
        }
        if self.workload.clients == 0 {
            return bad("workload.clients must be at least 1".into());
        }
        for t in [
            self.timers.source_period,
            self.timers.target_period,
            self.timers.actual_period,
            self.timers.refresh_period,
            self.timers.retransmit_timeout,
            self.timers.stall_timeout,
            self.timers.controller_period,
            self.timers.catchup_retry,
        ] {
            if t == 0 {
                return bad("timer periods must be positive".into());
            }
        }
        Ok(())
    }

    pub fn source_count(&self) -> u32 {
        self.f + 1
    }

    pub fn committer_count(&self) -> u32 {
        2 * self.f + 1
    }

    pub fn executor_count(&self) -> u32 {
        2 * self.f + 1
    }

    pub fn quorum(&self) -> u32 {
        self.f + 1
    }
}
