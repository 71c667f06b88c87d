//! Scenario files, runners for the reference experiments and their
//! artifacts.

mod artifacts;
mod config;
mod report;
mod run;

pub use artifacts::{write_artifacts, write_diagnostic_bundle, write_mat};
pub use config::{GridConfig, InitialConfig, Mode, ModelConfig, ScenarioConfig};
pub use report::{
    half_life, steady_stats, trend_slope, DriftSummary, LyapunovSummary, MetricSummary, PeSummary, RunReport,
    SteadyStats, SweepRow, SweepTable,
};
pub use run::{observer_inputs, scenario_layout, run_drift_study, run_perturbation_sweep, run_scenario, KernelDump, RunOutput};
