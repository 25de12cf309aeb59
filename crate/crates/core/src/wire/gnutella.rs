//! Gnutella v0.4 descriptor codec.
//!
//! ```text
//! offset  size  field
//!   0      16   descriptor id
//!  16       1   payload kind (0x00 ping, 0x01 pong, 0x40 push, 0x80 query, 0x81 query hit)
//!  17       1   ttl
//!  18       1   hops
//!  19       4   payload length (LE)
//!  23       n   payload
//! ```
//!
//! Multi-byte integers are little-endian, IPv4 addresses are written in
//! network order. Query criteria end with one NUL, query-hit file names
//! end with two.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DescriptorId, ServentId};

pub const HEADER_LEN: usize = 23;
pub const PONG_LEN: usize = 14;
pub const PUSH_LEN: usize = 26;
const QUERY_HIT_FIXED: usize = 11;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GnutellaError {
    #[error("need at least {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown payload kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("header says {header:?} but payload is {payload:?}")]
    KindMismatch {
        header: PayloadKind,
        payload: PayloadKind,
    },
    #[error("{field} contains a NUL byte")]
    EmbeddedNul { field: &'static str },
    #[error("query criteria is empty")]
    EmptyCriteria,
    #[error("query hit carries {0} results; at most 255 fit")]
    TooManyHits(usize),
    #[error("query hit declares {declared} results but carries {found}")]
    HitCountMismatch { declared: u8, found: usize },
    #[error("{kind:?} payload must be {expected} bytes, got {got}")]
    BadLength {
        kind: PayloadKind,
        expected: usize,
        got: usize,
    },
    #[error("malformed {0} payload")]
    Malformed(&'static str),
    #[error("text field is not valid UTF-8")]
    BadText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum PayloadKind {
    Ping = 0x00,
    Pong = 0x01,
    Push = 0x40,
    Query = 0x80,
    QueryHit = 0x81,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 5] = [
        PayloadKind::Ping,
        PayloadKind::Pong,
        PayloadKind::Push,
        PayloadKind::Query,
        PayloadKind::QueryHit,
    ];

    pub fn from_byte(b: u8) -> Result<Self, GnutellaError> {
        match b {
            0x00 => Ok(Self::Ping),
            0x01 => Ok(Self::Pong),
            0x40 => Ok(Self::Push),
            0x80 => Ok(Self::Query),
            0x81 => Ok(Self::QueryHit),
            other => Err(GnutellaError::UnknownKind(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ping => "ping",
            Self::Pong => "pong",
            Self::Push => "push",
            Self::Query => "query",
            Self::QueryHit => "queryhit",
        }
    }

    /// Kind of the request a reply travels back along, if this is a reply.
    pub fn request_kind(self) -> Option<PayloadKind> {
        match self {
            Self::Pong => Some(Self::Ping),
            Self::QueryHit => Some(Self::Query),
            Self::Push => Some(Self::QueryHit),
            Self::Ping | Self::Query => None,
        }
    }

    pub fn is_broadcast(self) -> bool {
        matches!(self, Self::Ping | Self::Query)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorHeader {
    pub descriptor_id: DescriptorId,
    pub payload_kind: PayloadKind,
    pub ttl: u8,
    pub hops: u8,
    pub payload_length: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PongPayload {
    pub port: u16,
    pub ip: Ipv4Addr,
    pub files_shared: u32,
    pub kilobytes_shared: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub min_speed: u16,
    pub criteria: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryHitResult {
    pub file_index: u32,
    pub file_size: u32,
    pub file_name: String,
}

/// Result set returned for a query. The wire `num_hits` byte is
/// `results.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryHitPayload {
    pub port: u16,
    pub ip: Ipv4Addr,
    pub speed: u32,
    pub results: Vec<QueryHitResult>,
    pub servent_id: ServentId,
}

impl QueryHitPayload {
    pub fn num_hits(&self) -> usize {
        self.results.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushPayload {
    pub servent_id: ServentId,
    pub file_index: u32,
    pub ip: Ipv4Addr,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Payload {
    Ping,
    Pong(PongPayload),
    Query(QueryPayload),
    QueryHit(QueryHitPayload),
    Push(PushPayload),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Ping => PayloadKind::Ping,
            Payload::Pong(_) => PayloadKind::Pong,
            Payload::Query(_) => PayloadKind::Query,
            Payload::QueryHit(_) => PayloadKind::QueryHit,
            Payload::Push(_) => PayloadKind::Push,
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), GnutellaError> {
        match self {
            Payload::Ping => {}
            Payload::Pong(p) => {
                out.extend_from_slice(&p.port.to_le_bytes());
                out.extend_from_slice(&p.ip.octets());
                out.extend_from_slice(&p.files_shared.to_le_bytes());
                out.extend_from_slice(&p.kilobytes_shared.to_le_bytes());
            }
            Payload::Query(q) => {
                if q.criteria.is_empty() {
                    return Err(GnutellaError::EmptyCriteria);
                }
                check_no_nul(&q.criteria, "criteria")?;
                out.extend_from_slice(&q.min_speed.to_le_bytes());
                out.extend_from_slice(q.criteria.as_bytes());
                out.push(0);
            }
            Payload::QueryHit(h) => {
                let n = u8::try_from(h.results.len())
                    .map_err(|_| GnutellaError::TooManyHits(h.results.len()))?;
                out.push(n);
                out.extend_from_slice(&h.port.to_le_bytes());
                out.extend_from_slice(&h.ip.octets());
                out.extend_from_slice(&h.speed.to_le_bytes());
                for r in &h.results {
                    check_no_nul(&r.file_name, "file name")?;
                    out.extend_from_slice(&r.file_index.to_le_bytes());
                    out.extend_from_slice(&r.file_size.to_le_bytes());
                    out.extend_from_slice(r.file_name.as_bytes());
                    out.extend_from_slice(&[0, 0]);
                }
                out.extend_from_slice(h.servent_id.as_bytes());
            }
            Payload::Push(p) => {
                out.extend_from_slice(p.servent_id.as_bytes());
                out.extend_from_slice(&p.file_index.to_le_bytes());
                out.extend_from_slice(&p.ip.octets());
                out.extend_from_slice(&p.port.to_le_bytes());
            }
        }
        Ok(())
    }

    fn decode(kind: PayloadKind, buf: &[u8]) -> Result<Self, GnutellaError> {
        let exact = |expected: usize| {
            if buf.len() == expected {
                Ok(())
            } else {
                Err(GnutellaError::BadLength {
                    kind,
                    expected,
                    got: buf.len(),
                })
            }
        };
        Ok(match kind {
            PayloadKind::Ping => {
                exact(0)?;
                Payload::Ping
            }
            PayloadKind::Pong => {
                exact(PONG_LEN)?;
                Payload::Pong(PongPayload {
                    port: le_u16(&buf[0..2]),
                    ip: ipv4(&buf[2..6]),
                    files_shared: le_u32(&buf[6..10]),
                    kilobytes_shared: le_u32(&buf[10..14]),
                })
            }
            PayloadKind::Push => {
                exact(PUSH_LEN)?;
                Payload::Push(PushPayload {
                    servent_id: ServentId(buf[0..16].try_into().expect("16 bytes")),
                    file_index: le_u32(&buf[16..20]),
                    ip: ipv4(&buf[20..24]),
                    port: le_u16(&buf[24..26]),
                })
            }
            PayloadKind::Query => {
                if buf.len() < 3 {
                    return Err(GnutellaError::Malformed("query"));
                }
                let (text, rest) = split_nul(&buf[2..]).ok_or(GnutellaError::Malformed("query"))?;
                if !rest.is_empty() {
                    return Err(GnutellaError::Malformed("query"));
                }
                if text.is_empty() {
                    return Err(GnutellaError::EmptyCriteria);
                }
                Payload::Query(QueryPayload {
                    min_speed: le_u16(&buf[0..2]),
                    criteria: utf8(text)?,
                })
            }
            PayloadKind::QueryHit => Payload::QueryHit(decode_query_hit(buf)?),
        })
    }
}

fn decode_query_hit(buf: &[u8]) -> Result<QueryHitPayload, GnutellaError> {
    if buf.len() < QUERY_HIT_FIXED + ServentId::LEN {
        return Err(GnutellaError::Malformed("query hit"));
    }
    let declared = buf[0];
    let trailer = buf.len() - ServentId::LEN;
    let mut results = Vec::with_capacity(declared as usize);
    let mut pos = QUERY_HIT_FIXED;
    while pos < trailer {
        if pos + 8 > trailer {
            return Err(GnutellaError::Malformed("query hit result"));
        }
        let file_index = le_u32(&buf[pos..pos + 4]);
        let file_size = le_u32(&buf[pos + 4..pos + 8]);
        pos += 8;
        let (name, rest) =
            split_nul(&buf[pos..trailer]).ok_or(GnutellaError::Malformed("query hit result"))?;
        if rest.first() != Some(&0) {
            return Err(GnutellaError::Malformed("query hit result"));
        }
        pos += name.len() + 2;
        results.push(QueryHitResult {
            file_index,
            file_size,
            file_name: utf8(name)?,
        });
    }
    if results.len() != declared as usize {
        return Err(GnutellaError::HitCountMismatch {
            declared,
            found: results.len(),
        });
    }
    Ok(QueryHitPayload {
        port: le_u16(&buf[1..3]),
        ip: ipv4(&buf[3..7]),
        speed: le_u32(&buf[7..11]),
        results,
        servent_id: ServentId(buf[trailer..].try_into().expect("16 bytes")),
    })
}

/// One Gnutella protocol message: header plus typed payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Descriptor {
    pub header: DescriptorHeader,
    pub payload: Payload,
}

impl Descriptor {
    /// Builds a descriptor with a payload length consistent with `payload`.
    pub fn new(id: DescriptorId, ttl: u8, hops: u8, payload: Payload) -> Self {
        let payload_length = payload_len(&payload) as u32;
        Self {
            header: DescriptorHeader {
                descriptor_id: id,
                payload_kind: payload.kind(),
                ttl,
                hops,
                payload_length,
            },
            payload,
        }
    }

    pub fn id(&self) -> DescriptorId {
        self.header.descriptor_id
    }

    pub fn kind(&self) -> PayloadKind {
        self.header.payload_kind
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + payload_len(&self.payload)
    }
}

fn payload_len(p: &Payload) -> usize {
    match p {
        Payload::Ping => 0,
        Payload::Pong(_) => PONG_LEN,
        Payload::Push(_) => PUSH_LEN,
        Payload::Query(q) => 2 + q.criteria.len() + 1,
        Payload::QueryHit(h) => {
            QUERY_HIT_FIXED
                + h.results
                    .iter()
                    .map(|r| 8 + r.file_name.len() + 2)
                    .sum::<usize>()
                + ServentId::LEN
        }
    }
}

/// Encodes a descriptor. The payload length written to the header is
/// recomputed from the payload.
pub fn encode_descriptor(d: &Descriptor) -> Result<Vec<u8>, GnutellaError> {
    let mut out = Vec::with_capacity(d.encoded_len());
    encode_descriptor_into(d, &mut out)?;
    Ok(out)
}

pub fn encode_descriptor_into(d: &Descriptor, out: &mut Vec<u8>) -> Result<(), GnutellaError> {
    let h = &d.header;
    if h.payload_kind != d.payload.kind() {
        return Err(GnutellaError::KindMismatch {
            header: h.payload_kind,
            payload: d.payload.kind(),
        });
    }
    let start = out.len();
    out.extend_from_slice(h.descriptor_id.as_bytes());
    out.push(h.payload_kind as u8);
    out.push(h.ttl);
    out.push(h.hops);
    out.extend_from_slice(&[0; 4]);
    if let Err(e) = d.payload.encode_into(out) {
        out.truncate(start);
        return Err(e);
    }
    let len = (out.len() - start - HEADER_LEN) as u32;
    out[start + 19..start + 23].copy_from_slice(&len.to_le_bytes());
    Ok(())
}

/// Decodes the descriptor at the front of `bytes`, returning it with the
/// number of bytes consumed (always `23 + payload_length`).
pub fn decode_descriptor(bytes: &[u8]) -> Result<(Descriptor, usize), GnutellaError> {
    if bytes.len() < HEADER_LEN {
        return Err(GnutellaError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let kind = PayloadKind::from_byte(bytes[16])?;
    let payload_length = le_u32(&bytes[19..23]);
    let total = HEADER_LEN
        .checked_add(payload_length as usize)
        .ok_or(GnutellaError::Malformed("header"))?;
    if bytes.len() < total {
        return Err(GnutellaError::Truncated {
            need: total,
            have: bytes.len(),
        });
    }
    let payload = Payload::decode(kind, &bytes[HEADER_LEN..total])?;
    let header = DescriptorHeader {
        descriptor_id: DescriptorId(bytes[0..16].try_into().expect("16 bytes")),
        payload_kind: kind,
        ttl: bytes[17],
        hops: bytes[18],
        payload_length,
    };
    Ok((Descriptor { header, payload }, total))
}

/// Decodes a buffer holding back-to-back descriptors.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<Descriptor>, GnutellaError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (d, used) = decode_descriptor(bytes)?;
        out.push(d);
        bytes = &bytes[used..];
    }
    Ok(out)
}

fn check_no_nul(s: &str, field: &'static str) -> Result<(), GnutellaError> {
    if s.as_bytes().contains(&0) {
        Err(GnutellaError::EmbeddedNul { field })
    } else {
        Ok(())
    }
}

fn split_nul(buf: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = buf.iter().position(|&b| b == 0)?;
    Some((&buf[..i], &buf[i + 1..]))
}

fn utf8(b: &[u8]) -> Result<String, GnutellaError> {
    String::from_utf8(b.to_vec()).map_err(|_| GnutellaError::BadText)
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn ipv4(b: &[u8]) -> Ipv4Addr {
    Ipv4Addr::new(b[0], b[1], b[2], b[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ping() -> Descriptor {
        Descriptor::new(DescriptorId::default(), 7, 0, Payload::Ping)
    }

    #[test]
    fn ping_header_layout() {
        let bytes = encode_descriptor(&ping()).unwrap();
        let mut expected = vec![0u8; 16];
        expected.extend_from_slice(&[0x00, 0x07, 0x00, 0, 0, 0, 0]);
        assert_eq!(bytes, expected);
        let (d, used) = decode_descriptor(&bytes).unwrap();
        assert_eq!(used, 23);
        assert_eq!(d, ping());
    }

    #[test]
    fn pong_payload_layout() {
        let d = Descriptor::new(
            DescriptorId::default(),
            1,
            0,
            Payload::Pong(PongPayload {
                port: 6346,
                ip: Ipv4Addr::new(10, 0, 0, 1),
                files_shared: 5,
                kilobytes_shared: 100,
            }),
        );
        let bytes = encode_descriptor(&d).unwrap();
        assert_eq!(
            &bytes[23..],
            &[0xCA, 0x18, 0x0A, 0x00, 0x00, 0x01, 0x05, 0, 0, 0, 0x64, 0, 0, 0]
        );
        assert_eq!(&bytes[19..23], &[14, 0, 0, 0]);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut bytes = vec![0u8; 16];
        bytes.extend_from_slice(&[0x01, 1, 0, 14, 0, 0, 0]);
        bytes.extend_from_slice(&[0u8; 10]);
        assert_eq!(
            decode_descriptor(&bytes).unwrap_err(),
            GnutellaError::Truncated { need: 37, have: 33 }
        );
    }

    #[test]
    fn short_header_is_an_error() {
        assert!(matches!(
            decode_descriptor(&[0u8; 22]),
            Err(GnutellaError::Truncated { need: 23, .. })
        ));
    }

    #[test]
    fn unknown_kinds_are_rejected() {
        for b in 0..=255u8 {
            let mut bytes = vec![0u8; 23];
            bytes[16] = b;
            let known = [0x00, 0x01, 0x40, 0x80, 0x81].contains(&b);
            match decode_descriptor(&bytes) {
                Err(GnutellaError::UnknownKind(k)) => assert!(!known && k == b),
                _ => assert!(known, "0x{b:02x} should be rejected"),
            }
        }
    }

    #[test]
    fn kind_mismatch_rejected_on_encode() {
        let mut d = ping();
        d.header.payload_kind = PayloadKind::Query;
        assert!(matches!(
            encode_descriptor(&d),
            Err(GnutellaError::KindMismatch { .. })
        ));
    }

    #[test]
    fn payload_length_is_recomputed() {
        let mut d = Descriptor::new(
            DescriptorId([9; 16]),
            3,
            4,
            Payload::Query(QueryPayload {
                min_speed: 0,
                criteria: "abc".into(),
            }),
        );
        d.header.payload_length = 999;
        let bytes = encode_descriptor(&d).unwrap();
        assert_eq!(bytes.len(), 23 + 6);
        assert_eq!(decode_descriptor(&bytes).unwrap().0.header.payload_length, 6);
    }

    #[test]
    fn nul_in_strings_rejected() {
        let d = Descriptor::new(
            DescriptorId::default(),
            7,
            0,
            Payload::Query(QueryPayload {
                min_speed: 0,
                criteria: "a\0b".into(),
            }),
        );
        assert_eq!(
            encode_descriptor(&d).unwrap_err(),
            GnutellaError::EmbeddedNul { field: "criteria" }
        );
    }

    #[test]
    fn hit_count_mismatch_detected() {
        let hit = QueryHitPayload {
            port: 1,
            ip: Ipv4Addr::LOCALHOST,
            speed: 2,
            results: vec![QueryHitResult {
                file_index: 1,
                file_size: 2,
                file_name: "x".into(),
            }],
            servent_id: ServentId([1; 16]),
        };
        let mut bytes =
            encode_descriptor(&Descriptor::new(DescriptorId::default(), 1, 0, Payload::QueryHit(hit)))
                .unwrap();
        bytes[23] = 2;
        assert_eq!(
            decode_descriptor(&bytes).unwrap_err(),
            GnutellaError::HitCountMismatch { declared: 2, found: 1 }
        );
    }

    #[test]
    fn back_to_back_framing() {
        let a = ping();
        let b = Descriptor::new(
            DescriptorId([7; 16]),
            5,
            2,
            Payload::Query(QueryPayload {
                min_speed: 10,
                criteria: "x y".into(),
            }),
        );
        let mut buf = encode_descriptor(&a).unwrap();
        let first_len = buf.len();
        buf.extend(encode_descriptor(&b).unwrap());
        let (_, used) = decode_descriptor(&buf).unwrap();
        assert_eq!(used, first_len);
        assert_eq!(decode_descriptor(&buf[used..]).unwrap().0, b);
        assert_eq!(decode_stream(&buf).unwrap(), vec![a, b]);
    }

    fn text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ._-]{1,24}"
    }

    fn arb_payload() -> impl Strategy<Value = Payload> {
        let ip = any::<u32>().prop_map(Ipv4Addr::from);
        prop_oneof![
            Just(Payload::Ping),
            (any::<u16>(), ip.clone(), any::<u32>(), any::<u32>()).prop_map(|(port, ip, f, k)| {
                Payload::Pong(PongPayload {
                    port,
                    ip,
                    files_shared: f,
                    kilobytes_shared: k,
                })
            }),
            (any::<u16>(), text()).prop_map(|(min_speed, criteria)| Payload::Query(QueryPayload {
                min_speed,
                criteria
            })),
            (
                any::<u16>(),
                ip.clone(),
                any::<u32>(),
                prop::collection::vec((any::<u32>(), any::<u32>(), "[a-z.]{0,12}"), 0..6),
                any::<[u8; 16]>()
            )
                .prop_map(|(port, ip, speed, rs, sid)| Payload::QueryHit(QueryHitPayload {
                    port,
                    ip,
                    speed,
                    results: rs
                        .into_iter()
                        .map(|(file_index, file_size, file_name)| QueryHitResult {
                            file_index,
                            file_size,
                            file_name
                        })
                        .collect(),
                    servent_id: ServentId(sid),
                })),
            (any::<[u8; 16]>(), any::<u32>(), ip, any::<u16>()).prop_map(|(sid, idx, ip, port)| {
                Payload::Push(PushPayload {
                    servent_id: ServentId(sid),
                    file_index: idx,
                    ip,
                    port,
                })
            }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(id in any::<[u8; 16]>(), ttl in any::<u8>(), hops in any::<u8>(), p in arb_payload()) {
            let d = Descriptor::new(DescriptorId(id), ttl, hops, p);
            let bytes = encode_descriptor(&d).unwrap();
            prop_assert_eq!(bytes.len(), 23 + d.header.payload_length as usize);
            let (back, used) = decode_descriptor(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, d);
        }

        #[test]
        fn framing(ps in prop::collection::vec(arb_payload(), 1..8)) {
            let ds: Vec<_> = ps.into_iter().enumerate()
                .map(|(i, p)| Descriptor::new(DescriptorId([i as u8; 16]), 7, 0, p))
                .collect();
            let mut buf = Vec::new();
            for d in &ds {
                encode_descriptor_into(d, &mut buf).unwrap();
            }
            prop_assert_eq!(decode_stream(&buf).unwrap(), ds);
        }
    }
}
