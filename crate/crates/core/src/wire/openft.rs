//! OpenFT packet codec.
//!
//! Header is one little-endian 32-bit word: bits 0-15 hold the payload
//! length (header excluded), bits 16-27 the packet type and bits 28-31 the
//! flags. Payload schemas are provisional: `nodeinfo`, `child` and the
//! three share packets are typed; `nodecap`, `session` and `stats` carry
//! length-prefixed key/value lists; the rest are opaque bytes.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Md5Digest, SharedFileRecord};

pub const HEADER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OpenFtError {
    #[error("need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown packet type 0x{0:03x}")]
    UnknownType(u16),
    #[error("payload of {0} bytes exceeds 65535")]
    Oversize(usize),
    #[error("flags {0} do not fit in 4 bits")]
    Flags(u8),
    #[error("{kind:?} cannot carry a {payload} payload")]
    PayloadMismatch {
        kind: PacketKind,
        payload: &'static str,
    },
    #[error("malformed {0} payload")]
    Malformed(&'static str),
    #[error("string field longer than 65535 bytes")]
    LongString,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u16)]
pub enum PacketKind {
    Version = 0,
    NodeInfo = 1,
    NodeList = 2,
    NodeCap = 3,
    Ping = 4,
    Session = 5,
    Child = 6,
    AddShare = 7,
    RemShare = 8,
    ModShare = 9,
    Stats = 10,
    Search = 11,
    Browse = 12,
    Push = 13,
}

impl PacketKind {
    pub const ALL: [PacketKind; 14] = [
        Self::Version,
        Self::NodeInfo,
        Self::NodeList,
        Self::NodeCap,
        Self::Ping,
        Self::Session,
        Self::Child,
        Self::AddShare,
        Self::RemShare,
        Self::ModShare,
        Self::Stats,
        Self::Search,
        Self::Browse,
        Self::Push,
    ];

    pub fn from_code(code: u16) -> Result<Self, OpenFtError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(OpenFtError::UnknownType(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Version => "version",
            Self::NodeInfo => "nodeinfo",
            Self::NodeList => "nodelist",
            Self::NodeCap => "nodecap",
            Self::Ping => "ping",
            Self::Session => "session",
            Self::Child => "child",
            Self::AddShare => "addshare",
            Self::RemShare => "remshare",
            Self::ModShare => "modshare",
            Self::Stats => "stats",
            Self::Search => "search",
            Self::Browse => "browse",
            Self::Push => "push",
        }
    }

    fn shape(self) -> Shape {
        match self {
            Self::NodeInfo => Shape::NodeInfo,
            Self::Child => Shape::Child,
            Self::AddShare | Self::RemShare | Self::ModShare => Shape::Share,
            Self::NodeCap | Self::Session | Self::Stats => Shape::KeyValues,
            Self::Version | Self::NodeList | Self::Ping | Self::Search | Self::Browse | Self::Push => {
                Shape::Opaque
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    NodeInfo,
    Child,
    Share,
    KeyValues,
    Opaque,
}

/// Node category bits carried in `nodeinfo`.
pub mod class {
    pub const USER: u16 = 0x1;
    pub const SEARCH: u16 = 0x2;
    pub const INDEX: u16 = 0x4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeAddr {
    pub ip: Ipv4Addr,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub http_port: u16,
    pub class: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum ChildOp {
    Request = 0,
    Accept = 1,
    Deny = 2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildMsg {
    pub op: ChildOp,
    /// The search node the request is addressed to, or that answered.
    pub target: NodeAddr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "body", rename_all = "snake_case")]
pub enum OpenFtPayload {
    NodeInfo(NodeInfo),
    Child(ChildMsg),
    Share(SharedFileRecord),
    KeyValues(Vec<(String, Vec<u8>)>),
    Opaque(Vec<u8>),
}

impl OpenFtPayload {
    fn shape(&self) -> Shape {
        match self {
            Self::NodeInfo(_) => Shape::NodeInfo,
            Self::Child(_) => Shape::Child,
            Self::Share(_) => Shape::Share,
            Self::KeyValues(_) => Shape::KeyValues,
            Self::Opaque(_) => Shape::Opaque,
        }
    }

    fn shape_name(&self) -> &'static str {
        match self {
            Self::NodeInfo(_) => "nodeinfo",
            Self::Child(_) => "child",
            Self::Share(_) => "share",
            Self::KeyValues(_) => "key/value",
            Self::Opaque(_) => "opaque",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenFtPacket {
    pub flags: u8,
    pub kind: PacketKind,
    pub payload: OpenFtPayload,
}

impl OpenFtPacket {
    pub fn new(kind: PacketKind, payload: OpenFtPayload) -> Self {
        Self {
            flags: 0,
            kind,
            payload,
        }
    }
}

pub fn encode_packet(p: &OpenFtPacket) -> Result<Vec<u8>, OpenFtError> {
    if p.flags > 0x0f {
        return Err(OpenFtError::Flags(p.flags));
    }
    if p.payload.shape() != p.kind.shape() {
        return Err(OpenFtError::PayloadMismatch {
            kind: p.kind,
            payload: p.payload.shape_name(),
        });
    }
    let mut body = Vec::new();
    match &p.payload {
        OpenFtPayload::NodeInfo(n) => {
            body.extend_from_slice(&n.ip.octets());
            body.extend_from_slice(&n.port.to_le_bytes());
            body.extend_from_slice(&n.http_port.to_le_bytes());
            body.extend_from_slice(&n.class.to_le_bytes());
        }
        OpenFtPayload::Child(c) => {
            body.push(c.op as u8);
            body.extend_from_slice(&c.target.ip.octets());
            body.extend_from_slice(&c.target.port.to_le_bytes());
        }
        OpenFtPayload::Share(r) => {
            body.extend_from_slice(r.md5.as_bytes());
            body.extend_from_slice(&r.size_bytes.to_le_bytes());
            body.extend_from_slice(&r.bitrate_kbps.to_le_bytes());
            body.extend_from_slice(&r.frequency_hz.to_le_bytes());
            body.extend_from_slice(&r.duration_s.to_le_bytes());
            put_bytes(&mut body, r.filename.as_bytes())?;
        }
        OpenFtPayload::KeyValues(kv) => {
            let n = u16::try_from(kv.len()).map_err(|_| OpenFtError::LongString)?;
            body.extend_from_slice(&n.to_le_bytes());
            for (k, v) in kv {
                put_bytes(&mut body, k.as_bytes())?;
                put_bytes(&mut body, v)?;
            }
        }
        OpenFtPayload::Opaque(b) => body.extend_from_slice(b),
    }
    if body.len() > MAX_PAYLOAD {
        return Err(OpenFtError::Oversize(body.len()));
    }
    let word = body.len() as u32 | (p.kind as u32) << 16 | (p.flags as u32) << 28;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&word.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_packet(bytes: &[u8]) -> Result<(OpenFtPacket, usize), OpenFtError> {
    if bytes.len() < HEADER_LEN {
        return Err(OpenFtError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let word = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
    let len = (word & 0xffff) as usize;
    let code = ((word >> 16) & 0x0fff) as u16;
    let flags = (word >> 28) as u8;
    let kind = PacketKind::from_code(code)?;
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(OpenFtError::Truncated {
            need: total,
            have: bytes.len(),
        });
    }
    let mut r = Reader {
        buf: &bytes[HEADER_LEN..total],
        what: kind.name(),
    };
    let payload = match kind.shape() {
        Shape::NodeInfo => OpenFtPayload::NodeInfo(NodeInfo {
            ip: r.ip()?,
            port: r.u16()?,
            http_port: r.u16()?,
            class: r.u16()?,
        }),
        Shape::Child => {
            let op = match r.u8()? {
                0 => ChildOp::Request,
                1 => ChildOp::Accept,
                2 => ChildOp::Deny,
                _ => return Err(OpenFtError::Malformed("child")),
            };
            OpenFtPayload::Child(ChildMsg {
                op,
                target: NodeAddr {
                    ip: r.ip()?,
                    port: r.u16()?,
                },
            })
        }
        Shape::Share => {
            let md5 = Md5Digest(r.take(16)?.try_into().expect("16 bytes"));
            let size_bytes = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            let bitrate_kbps = r.u32()?;
            let frequency_hz = r.u32()?;
            let duration_s = r.u32()?;
            let filename = r.string()?;
            OpenFtPayload::Share(SharedFileRecord {
                filename,
                md5,
                size_bytes,
                bitrate_kbps,
                frequency_hz,
                duration_s,
            })
        }
        Shape::KeyValues => {
            let n = r.u16()?;
            let mut kv = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let k = r.string()?;
                let v = r.bytes()?.to_vec();
                kv.push((k, v));
            }
            OpenFtPayload::KeyValues(kv)
        }
        Shape::Opaque => OpenFtPayload::Opaque(std::mem::take(&mut r.buf).to_vec()),
    };
    if !r.buf.is_empty() {
        return Err(OpenFtError::Malformed(kind.name()));
    }
    Ok((
        OpenFtPacket {
            flags,
            kind,
            payload,
        },
        total,
    ))
}

pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<OpenFtPacket>, OpenFtError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (p, used) = decode_packet(bytes)?;
        out.push(p);
        bytes = &bytes[used..];
    }
    Ok(out)
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<(), OpenFtError> {
    let n = u16::try_from(b.len()).map_err(|_| OpenFtError::LongString)?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(b);
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OpenFtError> {
        if self.buf.len() < n {
            return Err(OpenFtError::Malformed(self.what));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, OpenFtError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, OpenFtError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, OpenFtError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn ip(&mut self) -> Result<Ipv4Addr, OpenFtError> {
        let b = self.take(4)?;
        Ok(Ipv4Addr::new(b[0], b[1], b[2], b[3]))
    }

    fn bytes(&mut self) -> Result<&'a [u8], OpenFtError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, OpenFtError> {
        let what = self.what;
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| OpenFtError::Malformed(what))
    }
}
