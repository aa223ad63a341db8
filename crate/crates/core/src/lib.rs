//! Dynamic traffic management with cooperative ITS services.
//!
//! The crate is organised around the operational loop of a traffic
//! management centre:
//!
//! * [`network`] describes the available road network (choice, control and
//!   regular nodes, links, control segments, route parts) plus the policy
//!   thresholds used to decide that something is a problem.
//! * [`catalog`] holds service descriptors and answers the bundling and
//!   contribution matrix queries.
//! * [`sim`] is a deterministic point-queue simulator producing the traffic
//!   state that problems are detected on.
//! * [`strategy`] composes escalating control strategies from detected
//!   problems, regulates conflicting services and runs response plans.
//! * [`bus`] dispatches activations from the operator through service
//!   providers to end users and turns them into simulation effects.
//! * [`scenario`] loads scenario directories and persists run records.
//! * [`engine`] ties everything together behind a single command queue.

pub mod bus;
pub mod catalog;
pub mod engine;
mod ids;
pub mod kpi;
pub mod network;
pub mod rng;
pub mod runlog;
pub mod scenario;
pub mod sim;
pub mod strategy;
#[cfg(test)]
mod testutil;

pub use ids::{AgentId, ElementId, LinkId, NodeId, RoutePartId, SegmentId, ServiceId};
