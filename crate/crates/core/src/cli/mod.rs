//! Experiment runner behind the `kgan` binary.

pub mod config;
pub mod report;
pub mod run;
pub mod svg;

pub use config::{parse_config, parse_config_str, DataSource, ExperimentConfig, NoiseKind};
pub use report::{verify_report, ReportRow};
pub use run::{audit_instance, run_experiment, RunSummary};
