//! Command-line entry points and the HTTP service for the DSE loop.

pub mod cli;
pub mod service;
