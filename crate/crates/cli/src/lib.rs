//! Command implementations and the HTTP service behind the `mcrd` binary.

pub mod commands;
pub mod server;
