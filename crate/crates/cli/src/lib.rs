//! Command-line tools and the TCP runner for the causal cache.

pub mod commands;
pub mod net;
pub mod runner;
pub mod wire;
