//! Library surface behind the `gradlab` binary: run configuration, dataset
//! ingestion, metrics emission, GLB1 checkpoints, and the subcommand
//! implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
