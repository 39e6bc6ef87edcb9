//! Experiment runner for the `ding` command-line tool.
//!
//! Subcommands map onto [`commands`]: `run`, `ablation`, `bias-scan` and
//! `validate`. Configuration lives in [`config`]; the built-in benchmarks in
//! [`bench`].

pub mod bench;
pub mod commands;
pub mod config;
pub mod output;
pub mod runner;
pub mod seeding;

pub use commands::{CliError, Overrides};
pub use config::{ConfigError, ExperimentConfig};
pub use seeding::derive_rng;
