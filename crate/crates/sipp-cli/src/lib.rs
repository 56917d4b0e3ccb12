//! Experiment harness around the pruning library: model/data generation,
//! prune runs, certificates, baselines, and ratio sweeps.

pub mod gen;
pub mod pipeline;
pub mod report;
