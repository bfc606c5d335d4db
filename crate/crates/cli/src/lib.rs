//! Command-line front end and Monte Carlo validation harness.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod output;
