//! Library side of the `blmpc` command-line driver: configuration
//! ingestion, result persistence, validation suites, and the subcommand
//! implementations. The binary in `main.rs` is a thin argument parser over
//! [`commands`].

pub mod commands;
pub mod config;
pub mod io;
pub mod suites;
