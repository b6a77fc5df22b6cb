//! Closed-loop design-space exploration for autonomous-driving compute
//! configurations.
//!
//! A synthetic pipeline model stands in for the driving simulator: each
//! design point (core count, core frequency, LiDAR rate) yields a trace of
//! publish/subscribe events and a driven trajectory. Both are analyzed into
//! metrics and bottleneck flags, which feed pluggable search strategies
//! competing to find the cost/navigation-time Pareto front under a fixed
//! evaluation budget.

pub mod cli;
pub mod config;
pub mod design_space;
pub mod orchestrator;
pub mod pareto_eval;
pub mod rng;
pub mod scenario;
pub mod search;
pub mod trace_analysis;
pub mod trajectory_analysis;
pub mod vehicle_model;
