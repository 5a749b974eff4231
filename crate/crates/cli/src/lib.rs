//! Configuration, presets and drivers behind the `entroflow` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod presets;
