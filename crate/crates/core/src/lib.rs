//! Multi-objective architecture search over DeepLabV3+ supernet subnetworks.

pub mod archive;
pub mod config;
pub mod cost;
pub mod engine;
pub mod eval;
pub mod genome;
pub mod nsga;
pub mod operators;
pub mod pareto;
