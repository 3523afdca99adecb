//! Deterministic discrete-event simulator for AI inference over degraded
//! cellular networks: backend request/response versus on-demand agents
//! deployed to the edge device.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod device;
pub mod engine;
pub mod geometry;
pub mod lifecycle;
pub mod metrics;
pub mod network;
pub mod registry;
pub mod scenario;
pub mod task;
pub mod world;

/// Planar position in local meters.
pub type Point = geometry::Point2<f64>;
/// Dead-reckoning pose in local meters and radians.
pub type Pose = device::Pose2<f64>;
