//! Experiment driver for the split-step CLE integrators: ensembles against
//! SSA, tolerance calibration, diagnostics and timing.

pub mod bench;
pub mod experiment;
pub mod plan;
pub mod report;
pub mod validate;
