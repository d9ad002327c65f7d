//! Command-line front end and HTTP job service for `stf-core`.

pub mod artifacts;
pub mod cli;
pub mod service;
