//! Command-line front end: configuration, artifact output and stage runners.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
