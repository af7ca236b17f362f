//! Config-driven experiment harness: single runs, temperature sweeps,
//! diagnostics and consolidated reports.
//!
//! Every run writes to `<out>/<config-hash>/tau-<tau>/<seed>/`.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod run;
pub mod sweep;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{apply_override, ExperimentConfig, DEFAULT_TAU_GRID};
pub use report::{report, Report};
pub use run::{
    build_dataset, diagnose, execute_run, run_dir, run_experiment, write_run, DiagnosticsReport,
    RunArtifacts, RunResult,
};
pub use sweep::{select_tau, sweep_temperature, SweepReport, ValidationRow};
