//! Napster: central index server, metaserver and peer transfers.

pub mod metaserver;
pub mod search;
pub mod server;
pub mod transfer;

pub use metaserver::{metaserver_assign, AssignError, MetaserverState, ServerSlot, SERVER_CAPACITY};
pub use search::{match_search, IndexEntry};
pub use server::{ClientConn, ServerState, UserEntry};
pub use transfer::{
    client_transfer_firewalled, client_transfer_normal, file_bytes, Direction, Phase,
    TransferDialogue, TransferReport, TransferRequest, Uploader,
};
