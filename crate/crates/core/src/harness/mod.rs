//! Command-line plumbing: configuration, output files, manifests, plots
//! and the parallel sweep executor.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
pub mod sweep;
pub mod validate;
