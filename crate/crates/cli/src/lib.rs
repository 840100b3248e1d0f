//! Command-line driver for training noisy networks and computing their
//! covering-number bounds and NVAC.

pub mod commands;
pub mod config;
pub mod nvac;
pub mod pipeline;
pub mod sweep;
