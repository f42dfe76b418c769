//! Experiment configuration, orchestration, persistence and reporting.

pub mod config;
pub mod report;
pub mod run;

pub use config::{ClassSplit, DataConfig, EvalConfig, ExperimentConfig, ModelConfig, TrainMode};
pub use report::{export_report, openness_table, ReportBundle};
pub use run::{
    evaluate, evaluate_checkpoint, metrics_csv, prepare_data, read_metrics, rerun_from_manifest, run_experiment,
    Evaluation, MetricRow, PreparedData, RunManifest, RunOutcome, RunStatus,
};
