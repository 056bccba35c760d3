//! File formats, the experiment harness and the command line for
//! `nnperm-core`.

pub mod cli;
pub mod config;
pub mod formats;
pub mod harness;

pub use nnperm_core as core;
