//! Scenario definitions, the single-trajectory runner, metrics and output.

pub mod emit;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use emit::{read_total_cost, write_csv, write_series, write_summary, Summary};
pub use runner::{
    episode_sweep, rollout, run_scenario, tune_expert, RunLog, ScenarioRun, StepRecord, TuneResult,
};
pub use scenario::{Horizon, InitKind, OptimizerSpec, Platform, RosterEntry, Scenario, Theta0};
