//! Library surface of the command-line pipeline; the binary in `main.rs` is
//! a thin argument-parsing shell over these modules.

pub mod commands;
pub mod config;
pub mod plot;
