use std::io::{self, Write};

use serde::Serialize;

use crate::gnutella::{DropReason, RouteKey};
use crate::types::NodeId;
use crate::wire::gnutella::{Descriptor, PayloadKind};

/// Routing fields of a Gnutella descriptor, also carried by super-peer
/// searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DescInfo {
    pub key: RouteKey,
    pub ttl: u8,
    pub hops: u8,
}

impl DescInfo {
    pub fn of(d: &Descriptor) -> Self {
        Self {
            key: RouteKey::of(d),
            ttl: d.header.ttl,
            hops: d.header.hops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MsgInfo {
    pub protocol: &'static str,
    pub kind: &'static str,
    pub bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub desc: Option<DescInfo>,
}

impl MsgInfo {
    pub fn payload_kind(&self) -> Option<PayloadKind> {
        self.desc.map(|d| d.key.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    SenderLeft,
    ReceiverLeft,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Opener {
    Downloader,
    Uploader,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Send {
        msg: u64,
        src: NodeId,
        dst: NodeId,
        /// The delivery being handled when this was sent.
        #[serde(skip_serializing_if = "Option::is_none")]
        cause: Option<u64>,
        info: MsgInfo,
    },
    Deliver {
        msg: u64,
        src: NodeId,
        dst: NodeId,
        info: MsgInfo,
    },
    Lost {
        msg: u64,
        src: NodeId,
        dst: NodeId,
        reason: LossReason,
    },
    QueueDrop {
        msg: u64,
        src: NodeId,
        dst: NodeId,
        kind: &'static str,
        /// Kinds still waiting on the link after the drop.
        queued: Vec<&'static str>,
    },
    RouteDrop {
        node: NodeId,
        reason: DropReason,
        info: MsgInfo,
    },
    QueryIssued {
        query: u32,
        node: NodeId,
        criteria: String,
        ttl: u8,
    },
    Examined {
        query: u32,
        node: NodeId,
    },
    Hit {
        query: u32,
        node: NodeId,
        responder: NodeId,
        results: u32,
    },
    Transfer {
        uploader: NodeId,
        downloader: NodeId,
        opened_by: Opener,
        filename: String,
        offset: u64,
        bytes: u64,
    },
    NodeLeave {
        node: NodeId,
    },
    NodeJoin {
        node: NodeId,
    },
    LinkFail {
        a: NodeId,
        b: NodeId,
    },
    Failover {
        failed: NodeId,
        reassigned: Vec<(NodeId, NodeId)>,
        unattached: Vec<NodeId>,
    },
    IndexSnapshot {
        node: NodeId,
        supers: u32,
        children: u32,
        files: u64,
    },
    Handshake {
        a: NodeId,
        b: NodeId,
        accepted: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub time_ms: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// Append-only record of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimTrace {
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    pub fn push(&mut self, time_ms: u64, event: TraceEvent) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { seq, time_ms, event });
        seq
    }

    pub fn events(&self) -> impl Iterator<Item = (u64, &TraceEvent)> {
        self.records.iter().map(|r| (r.time_ms, &r.event))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}
