//! Experiment orchestration: configs, seeded repeats, model selection and
//! report output.

pub mod config;
pub mod data;
pub mod experiment;
pub mod report;

pub use config::{env_kind, EnvKind, ExperimentConfig, Family, Method, Metric, Precision, Selection};
pub use data::{generate_env, load_digits, DataSource};
pub use experiment::{pvalue_series, repeat_seed, run_experiment, PValueRow, Provenance, ResultRow, RunReport};
pub use report::{emit_report, read_run_dir, render, write_run_dir, Aggregate, AverageRow, Format};
