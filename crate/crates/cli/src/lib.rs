//! Library surface of the `epictl` experiment harness: configuration
//! loading, presets and experiment orchestration, re-used by the binary,
//! the test suites and the benchmarks.

pub mod config;
pub mod experiments;

pub use config::{
    load_config, preset_table1, preset_uk2021, resolve, CliError, CliResult, ConfigFile,
    ExperimentConfig, ExperimentKind,
};
pub use experiments::{run_experiment, Manifest};
