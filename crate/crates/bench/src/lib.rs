//! Benchmark harness: CLI commands, run manifests, plots and the acceptance
//! checks.

pub mod acceptance;
pub mod cli;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod manifest;
pub mod plot;
