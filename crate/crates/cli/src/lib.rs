//! Command-line front end for `odi-core`: config and snapshot ingestion, the subcommands,
//! artifact writing and run manifests.

pub mod cli;
pub mod commands;
pub mod error;
pub mod invocation;
pub mod manifest;
pub mod output;
pub mod snapshot;
pub mod suites;
