//! Command-line front end: configuration, runs, sweeps and their output files.

pub mod config;
pub mod error;
pub mod run;
pub mod sweep;
