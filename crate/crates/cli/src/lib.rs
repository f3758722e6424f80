//! Configuration, orchestration and reporting for the `biconf` binary.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, RunConfig};
pub use report::Report;
pub use run::{execute, exit_code, Cli, Command, Outcome};
