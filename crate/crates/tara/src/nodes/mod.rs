//! Protocol stage implementations and the factory that instantiates them.

pub mod committer;
pub mod controller;
pub mod executor;
pub mod feedback;
pub mod proposer;
pub mod request_source;

use crate::config::ScenarioConfig;
use crate::sim::node::Node;
use crate::sim::NodeFactory;
use crate::topology::{Role, StreamKind, Topology};

/// Builds the node for one global node index. `rejoin` distinguishes a
/// restart after a crash from initial deployment; restarted nodes recover
/// only what their durable storage holds.
pub fn build_node(
    topo: &Topology,
    node: usize,
    rejoin: bool,
    cfg: &ScenarioConfig,
) -> Box<dyn Node> {
    let (stage_id, instance) = topo.node_location(node);
    let stage = topo.stage(stage_id);
    let partition = stage.partition.unwrap_or(0);
    match stage.role {
        Role::RequestSource => Box::new(request_source::RequestSourceNode::new(
            cfg.partitions,
            cfg.batch_size,
            cfg.batch_timeout,
            &cfg.timers,
        )),
        Role::Proposer => Box::new(proposer::ProposerNode::new(
            cfg.f,
            partition,
            cfg.partitions,
            cfg.window,
            cfg.max_proposals_per_tick,
            // Proposer 0 starts already entered in view 0 at deployment.
            // After a crash it re-enters through record bundles like any
            // view-change successor.
            !rejoin && instance == 0,
        )),
        Role::Committer => Box::new(committer::CommitterNode::new(
            cfg.f,
            partition,
            cfg.partitions,
            cfg.window,
        )),
        Role::Executor => Box::new(executor::ExecutorNode::new(
            cfg.f,
            cfg.partitions,
            cfg.checkpoint_interval,
            cfg.timers.actual_period,
            cfg.timers.catchup_retry,
        )),
        Role::Controller => Box::new(controller::ControllerNode::new(
            cfg.f,
            cfg.timers.stall_timeout,
            cfg.timers.controller_period,
            cfg.timers.source_expiry,
            cfg.timers.refresh_period,
        )),
        Role::RequestSink => Box::new(feedback::RequestSinkNode::new()),
        Role::GcSink => Box::new(feedback::FeedForwardNode::new(
            StreamKind::Checkpoint,
            StreamKind::GcFeed,
        )),
        Role::GcSource => Box::new(feedback::GcSourceNode::new(
            cfg.f,
            cfg.timers.refresh_period,
        )),
        Role::ViewSink => Box::new(feedback::FeedForwardNode::new(
            StreamKind::ViewAnnounce,
            StreamKind::ViewFeed,
        )),
        Role::ViewSource => Box::new(feedback::ViewSourceNode::new(cfg.timers.refresh_period)),
        Role::RecordSink => Box::new(feedback::FeedForwardNode::new(
            StreamKind::Record,
            StreamKind::RecordFeed,
        )),
        Role::RecordSource => Box::new(feedback::RecordSourceNode::new(cfg.f)),
    }
}

/// Standard factory for simulator construction.
pub fn factory() -> NodeFactory {
    Box::new(build_node)
}
