//! Session commands and the live WebSocket service behind the `myoloop` binary.

pub mod commands;
pub mod server;
