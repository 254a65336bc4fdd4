//! Scenario execution, measurement, and post-run verification.

pub mod audit;
pub mod linearizability;
pub mod metrics;
pub mod scenario;
pub mod sweep;
