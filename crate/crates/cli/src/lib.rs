//! Config-driven experiment runner for the `markov-circle` library.
//!
//! The binary `mcircle` parses a TOML experiment document (see
//! [`config`]), resolves presets and overrides, runs one pipeline from
//! [`runner`] and writes a JSON summary plus CSV data into the output
//! directory.

pub mod config;
pub mod runner;

pub use config::{load, ConfigError, ExperimentConfig, Overrides, ResolvedExperiment};
pub use runner::{run, verify_all, RunOutcome, Verb, VerifyReport, VerifyRow};
