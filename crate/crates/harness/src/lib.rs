//! Benchmark orchestration for the helmdd solver: configuration, runs,
//! sweeps, scaling efficiencies and result artifacts.

pub mod config;
pub mod output;
pub mod run;
pub mod scaling;

pub use config::RunConfig;
pub use run::{run, solve_frequency, FrequencyReport, FrequencyResult, RunSummary};
pub use scaling::{iteration_frequency_sweep, strong_efficiency, weak_efficiency, ScalingRecord, SweepTable};
