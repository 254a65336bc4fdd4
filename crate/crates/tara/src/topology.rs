//! Static dataflow topology: stages, replica counts, and streams.
//!
//! The protocol graph is acyclic on its processing edges; feedback (snapshot
//! announcements, view announcements, committer records) travels through
//! dedicated sink stages whose output queues feed paired source stages, so
//! cycles exist only across those queue hops.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown stage {0}")]
    UnknownStage(String),
    #[error("bad node path {0}; expected stage:index")]
    BadNodePath(String),
    #[error("instance {instance} out of range for stage {stage}")]
    InstanceOutOfRange { stage: String, instance: u32 },
    #[error("processing edges form a cycle involving stage {0}")]
    Cycle(String),
}

/// Replica roles, one per stage kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    RequestSource,
    Proposer,
    Committer,
    Executor,
    Controller,
    RequestSink,
    GcSink,
    GcSource,
    ViewSink,
    ViewSource,
    RecordSink,
    RecordSource,
}

impl Role {
    /// Replica count for tolerating `f` crash faults. Stages whose outputs
    /// are adopted by quorum need 2f+1 replicas; the rest need f+1.
    pub fn instances(self, f: u32) -> u32 {
        match self {
            Role::RequestSource | Role::Proposer | Role::Controller | Role::RequestSink => f + 1,
            Role::Committer
            | Role::Executor
            | Role::GcSink
            | Role::GcSource
            | Role::ViewSink
            | Role::ViewSource
            | Role::RecordSink
            | Role::RecordSource => 2 * f + 1,
        }
    }

    /// Whether one stage of this role exists per partition (as opposed to
    /// being shared by all partitions).
    pub fn per_partition(self) -> bool {
        !matches!(
            self,
            Role::RequestSource | Role::Executor | Role::GcSink | Role::GcSource
        )
    }

    pub fn base_name(self) -> &'static str {
        match self {
            Role::RequestSource => "request_source",
            Role::Proposer => "proposer",
            Role::Committer => "committer",
            Role::Executor => "executor",
            Role::Controller => "controller",
            Role::RequestSink => "request_sink",
            Role::GcSink => "gc_sink",
            Role::GcSource => "gc_source",
            Role::ViewSink => "view_sink",
            Role::ViewSource => "view_source",
            Role::RecordSink => "record_sink",
            Role::RecordSource => "record_source",
        }
    }
}

/// Named streams connecting stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StreamKind {
    Request,
    Propose,
    Commit,
    Reply,
    Checkpoint,
    GcFeed,
    Stable,
    Target,
    Actual,
    ViewAnnounce,
    ViewFeed,
    View,
    Record,
    RecordFeed,
    Records,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Request => "REQUEST",
            StreamKind::Propose => "PROPOSE",
            StreamKind::Commit => "COMMIT",
            StreamKind::Reply => "REPLY",
            StreamKind::Checkpoint => "CHECKPOINT",
            StreamKind::GcFeed => "GC_FEED",
            StreamKind::Stable => "STABLE",
            StreamKind::Target => "TARGET",
            StreamKind::Actual => "ACTUAL",
            StreamKind::ViewAnnounce => "VIEW_ANNOUNCE",
            StreamKind::ViewFeed => "VIEW_FEED",
            StreamKind::View => "VIEW",
            StreamKind::Record => "RECORD",
            StreamKind::RecordFeed => "RECORD_FEED",
            StreamKind::Records => "RECORDS",
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How an emission fans out to a route's target stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingMode {
    /// One delivery attempt per live instance of every target stage.
    Broadcast,
    /// One delivery attempt to a single named instance; the emitter supplies
    /// (partition, instance).
    Direct,
    /// Like Broadcast but confined to the target stage of one partition,
    /// chosen per emission by the emitter.
    Partition,
    /// Sink-to-source queue hop: instance i of the sink stage feeds instance
    /// i of the paired source stage.
    Paired,
}

pub type StageId = usize;

#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub role: Role,
    /// Partition that owns this stage; None for shared stages.
    pub partition: Option<u32>,
    pub instances: u32,
    /// Global index of this stage's instance 0.
    pub first_node: usize,
}

#[derive(Debug, Clone)]
pub struct Route {
    pub stream: StreamKind,
    pub from: StageId,
    /// For Partition mode, one entry per partition, indexed by partition.
    pub targets: Vec<StageId>,
    pub mode: RoutingMode,
}

/// Fully resolved static topology for given fault tolerance and partition
/// count.
#[derive(Debug, Clone)]
pub struct Topology {
    pub f: u32,
    pub partitions: u32,
    pub stages: Vec<Stage>,
    pub routes: Vec<Route>,
    total_nodes: usize,
    by_name: BTreeMap<String, StageId>,
}

impl Topology {
    pub fn total_nodes(&self) -> usize {
        self.total_nodes
    }

    pub fn stage(&self, id: StageId) -> &Stage {
        &self.stages[id]
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage_named(&self, name: &str) -> Result<StageId, TopologyError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TopologyError::UnknownStage(name.to_string()))
    }

    /// Stage of `role` owned by `partition` (ignored for shared roles).
    pub fn stage_of(&self, role: Role, partition: u32) -> StageId {
        let name = stage_name(role, partition);
        self.by_name[&name]
    }

    pub fn node_index(&self, stage: StageId, instance: u32) -> usize {
        debug_assert!(instance < self.stages[stage].instances);
        self.stages[stage].first_node + instance as usize
    }

    /// Maps a global node index back to (stage, instance).
    pub fn node_location(&self, node: usize) -> (StageId, u32) {
        let stage = self
            .stages
            .partition_point(|s| s.first_node + s.instances as usize <= node)
            .min(self.stages.len() - 1);
        let s = &self.stages[stage];
        (stage, (node - s.first_node) as u32)
    }

    pub fn node_name(&self, node: usize) -> String {
        let (stage, instance) = self.node_location(node);
        format!("{}:{}", self.stages[stage].name, instance)
    }

    /// Parses "stage:index" into a global node index.
    pub fn parse_node_path(&self, path: &str) -> Result<usize, TopologyError> {
        let (stage_name, idx) = path
            .rsplit_once(':')
            .ok_or_else(|| TopologyError::BadNodePath(path.to_string()))?;
        let instance: u32 = idx
            .parse()
            .map_err(|_| TopologyError::BadNodePath(path.to_string()))?;
        let stage = self.stage_named(stage_name)?;
        if instance >= self.stages[stage].instances {
            return Err(TopologyError::InstanceOutOfRange {
                stage: stage_name.to_string(),
                instance,
            });
        }
        Ok(self.node_index(stage, instance))
    }

    pub fn route_from(&self, stage: StageId, stream: StreamKind) -> Option<&Route> {
        self.routes
            .iter()
            .find(|r| r.from == stage && r.stream == stream)
    }

    /// Logical server hosting a replica. Replicas of one stage always sit on
    /// distinct servers; co-located storage (snapshots) shares the replica's
    /// fate while it is down.
    pub fn server_of(&self, _stage: StageId, instance: u32) -> u32 {
        instance
    }

    /// Checks that processing edges (everything except the sink-to-source
    /// queue hops) form a DAG.
    fn check_acyclic(&self) -> Result<(), TopologyError> {
        let n = self.stages.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for route in &self.routes {
            if route.mode == RoutingMode::Paired {
                continue;
            }
            for &t in &route.targets {
                out[route.from].push(t);
                indegree[t] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(s) = queue.pop() {
            seen += 1;
            for &t in &out[s] {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    queue.push(t);
                }
            }
        }
        if seen != n {
            let culprit = (0..n).find(|&i| indegree[i] > 0).unwrap();
            return Err(TopologyError::Cycle(self.stages[culprit].name.clone()));
        }
        Ok(())
    }
}

fn stage_name(role: Role, partition: u32) -> String {
    if role.per_partition() {
        format!("{}/p{}", role.base_name(), partition)
    } else {
        role.base_name().to_string()
    }
}

/// Builds the full stage and route graph for `f` tolerated faults and
/// `partitions` consensus partitions.
pub fn build_topology(f: u32, partitions: u32) -> Topology {
    assert!(partitions >= 1);
    let mut stages: Vec<Stage> = Vec::new();
    let mut by_name = BTreeMap::new();
    let mut next_node = 0usize;

    let mut add_stage = |stages: &mut Vec<Stage>, role: Role, partition: Option<u32>| -> StageId {
        let name = match partition {
            Some(p) => stage_name(role, p),
            None => role.base_name().to_string(),
        };
        let instances = role.instances(f);
        let id = stages.len();
        stages.push(Stage {
            name: name.clone(),
            role,
            partition,
            instances,
            first_node: next_node,
        });
        next_node += instances as usize;
        by_name.insert(name, id);
        id
    };

    let request_source = add_stage(&mut stages, Role::RequestSource, None);
    let executor = add_stage(&mut stages, Role::Executor, None);
    let gc_sink = add_stage(&mut stages, Role::GcSink, None);
    let gc_source = add_stage(&mut stages, Role::GcSource, None);

    let mut proposer = Vec::new();
    let mut committer = Vec::new();
    let mut controller = Vec::new();
    let mut request_sink = Vec::new();
    let mut view_sink = Vec::new();
    let mut view_source = Vec::new();
    let mut record_sink = Vec::new();
    let mut record_source = Vec::new();
    for p in 0..partitions {
        proposer.push(add_stage(&mut stages, Role::Proposer, Some(p)));
        committer.push(add_stage(&mut stages, Role::Committer, Some(p)));
        controller.push(add_stage(&mut stages, Role::Controller, Some(p)));
        request_sink.push(add_stage(&mut stages, Role::RequestSink, Some(p)));
        view_sink.push(add_stage(&mut stages, Role::ViewSink, Some(p)));
        view_source.push(add_stage(&mut stages, Role::ViewSource, Some(p)));
        record_sink.push(add_stage(&mut stages, Role::RecordSink, Some(p)));
        record_source.push(add_stage(&mut stages, Role::RecordSource, Some(p)));
    }

    let mut routes = vec![
        Route {
            stream: StreamKind::Request,
            from: request_source,
            targets: proposer.clone(),
            mode: RoutingMode::Partition,
        },
        Route {
            stream: StreamKind::Target,
            from: request_source,
            targets: controller.clone(),
            mode: RoutingMode::Broadcast,
        },
        Route {
            stream: StreamKind::Reply,
            from: executor,
            targets: request_sink.clone(),
            mode: RoutingMode::Direct,
        },
        Route {
            stream: StreamKind::Checkpoint,
            from: executor,
            targets: vec![gc_sink],
            mode: RoutingMode::Broadcast,
        },
        Route {
            stream: StreamKind::Actual,
            from: executor,
            targets: controller.clone(),
            mode: RoutingMode::Broadcast,
        },
        Route {
            stream: StreamKind::GcFeed,
            from: gc_sink,
            targets: vec![gc_source],
            mode: RoutingMode::Paired,
        },
    ];
    {
        let mut stable_targets = vec![executor];
        stable_targets.extend(proposer.iter().copied());
        stable_targets.extend(committer.iter().copied());
        routes.push(Route {
            stream: StreamKind::Stable,
            from: gc_source,
            targets: stable_targets,
            mode: RoutingMode::Broadcast,
        });
    }
    for p in 0..partitions as usize {
        routes.push(Route {
            stream: StreamKind::Propose,
            from: proposer[p],
            targets: vec![committer[p]],
            mode: RoutingMode::Broadcast,
        });
        routes.push(Route {
            stream: StreamKind::Commit,
            from: committer[p],
            targets: vec![executor],
            mode: RoutingMode::Broadcast,
        });
        routes.push(Route {
            stream: StreamKind::Record,
            from: committer[p],
            targets: vec![record_sink[p]],
            mode: RoutingMode::Broadcast,
        });
        routes.push(Route {
            stream: StreamKind::ViewAnnounce,
            from: controller[p],
            targets: vec![view_sink[p]],
            mode: RoutingMode::Broadcast,
        });
        routes.push(Route {
            stream: StreamKind::ViewFeed,
            from: view_sink[p],
            targets: vec![view_source[p]],
            mode: RoutingMode::Paired,
        });
        routes.push(Route {
            stream: StreamKind::View,
            from: view_source[p],
            targets: vec![proposer[p], committer[p], executor, controller[p]],
            mode: RoutingMode::Broadcast,
        });
        routes.push(Route {
            stream: StreamKind::RecordFeed,
            from: record_sink[p],
            targets: vec![record_source[p]],
            mode: RoutingMode::Paired,
        });
        routes.push(Route {
            stream: StreamKind::Records,
            from: record_source[p],
            targets: vec![proposer[p]],
            mode: RoutingMode::Direct,
        });
    }

    let topo = Topology {
        f,
        partitions,
        stages,
        routes,
        total_nodes: next_node,
        by_name,
    };
    topo.check_acyclic()
        .expect("protocol graph must be acyclic on processing edges");
    topo
}
