//! Verification harness, cost reports, training demo and file formats on
//! top of `fracdet-core`.
//!
//! The core crate is pure computation; everything that touches the
//! filesystem or a terminal lives here: the `key = value` run
//! configuration, JSON verification reports, the parameter-blob / PGM /
//! CSV formats, and the `fracdet` binary's subcommands.

pub mod commands;
pub mod config;
pub mod formats;
pub mod report;
pub mod suites;

pub use config::RunConfig;
pub use report::{CheckEntry, VerificationReport};
