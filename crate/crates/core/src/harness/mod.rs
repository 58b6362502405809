//! Config-driven experiment harness.

mod config;
mod run;
mod snapshots;

pub use config::{
    load_config, parse_config, ExperimentConfig, FilterConfig, FilterTuning, InterpretConfig,
    ModelConfig, NoiseConfig, Preset, SimulationConfig, SnapshotConfig,
};
pub use run::{
    audit_leaks, cell_key, grid_search, run_experiment, run_experiment_with, CellReport,
    CellStatus, ConditionReport, GridPoint, GridReport, GridResult, JaccardReport, PooledReport,
    Progress, RunReport, SplitReport, SummaryReport, REPORT_SCHEMA_VERSION,
};
pub use snapshots::{snapshot_profiles, snapshot_times, write_profile_window, ProfileWindow};
