//! Library surface of the pipeline CLI, so integration tests drive the same
//! code paths as the binary.

pub mod commands;
pub mod config;
