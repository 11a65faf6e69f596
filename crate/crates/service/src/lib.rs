//! Session service for the reference game: wire protocol, session hub,
//! WebSocket server, replay export and the `seqref` command line.

pub mod cli;
pub mod hub;
pub mod protocol;
pub mod replay;
pub mod server;
