//! TARA: state-machine replication as a stream-processing dataflow.
//!
//! The protocol is decomposed into small stream operators (request sources,
//! proposers, committers, executors, plus garbage-collection and view-change
//! feedback loops) wired into a DAG. Everything runs on a deterministic
//! discrete-event simulator, so a seed plus a scenario config reproduces a run
//! bit for bit. The `harness` module adds workload clients, fault injection,
//! safety audits and a linearizability checker on top.

pub mod app;
pub mod client;
pub mod config;
pub mod harness;
pub mod messages;
pub mod nodes;
pub mod partitioning;
pub mod sim;
pub mod topology;
pub mod window;
pub mod wire;
