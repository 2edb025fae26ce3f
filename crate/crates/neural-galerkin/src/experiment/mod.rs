//! Experiment harness: configuration files, the run pipeline, error metrics,
//! and output formats. This is the programmatic surface behind the `ng`
//! command-line tool.

pub mod config;
pub mod io;
pub mod metrics;
pub mod runner;

pub use config::{Config, ConfigError, Variant};
pub use metrics::MetricSeries;
pub use runner::{build_reference, check, run, CheckReport, RunnerError, RunSummary};
