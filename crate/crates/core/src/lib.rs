//! Simulation and joint optimization of client selection, gradient pruning and
//! radio/compute resources for federated edge learning.

pub mod bound;
pub mod cli;
pub mod cost;
pub mod datasets;
pub mod fedsim;
pub mod generalization;
pub mod optimizer;
pub mod presets;
pub mod rng;
pub mod wireless;
