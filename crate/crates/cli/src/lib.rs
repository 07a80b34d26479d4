//! Stage commands, run configuration and artifact store behind the
//! `brainalign` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod store;
