//! Stateless servent policies: handshake, local matching, queue dropping,
//! connection health and the flooding coverage estimate.

use thiserror::Error;

use crate::types::{name_matches, ServentId, SharedFileRecord};
use crate::wire::gnutella::{PayloadKind, QueryHitPayload, QueryHitResult};

pub const PROTOCOL_VERSION: &str = "0.4";
pub const CONNECT_PREFIX: &str = "GNUTELLA CONNECT/";
pub const ACCEPT_RESPONSE: &str = "GNUTELLA OK\n\n";

/// How long a connection may stay silent before it is considered clogged.
pub const HEALTH_WINDOW_MS: u64 = 10_000;

pub fn connect_request() -> String {
    format!("{CONNECT_PREFIX}{PROTOCOL_VERSION}\n\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    Malformed,
    Version,
    Slots,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Handshake {
    Accept { response: &'static str },
    Reject { reason: RejectReason, response: String },
}

impl Handshake {
    pub fn is_accept(&self) -> bool {
        matches!(self, Handshake::Accept { .. })
    }
}

/// Answers a connect request given the number of free connection slots.
pub fn handshake(request_line: &str, free_slots: usize) -> Handshake {
    let line = request_line.trim_end_matches(['\n', '\r']);
    let reject = |reason, text: &str| Handshake::Reject {
        reason,
        response: format!("GNUTELLA 503 {text}\n\n"),
    };
    let Some(version) = line.strip_prefix(CONNECT_PREFIX) else {
        return reject(RejectReason::Malformed, "Bad Request");
    };
    if version != PROTOCOL_VERSION {
        return reject(RejectReason::Version, "Version Not Supported");
    }
    if free_slots == 0 {
        return reject(RejectReason::Slots, "Busy");
    }
    Handshake::Accept {
        response: ACCEPT_RESPONSE,
    }
}

/// What a responding servent puts in the fixed part of a query hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponderIdentity {
    pub servent_id: ServentId,
    pub ip: std::net::Ipv4Addr,
    pub port: u16,
    pub speed_kbps: u32,
}

/// Matches a query against the local index. Yields nothing when no file
/// matches or when this servent is slower than the requested minimum.
pub fn answer_query(
    criteria: &str,
    min_speed: u16,
    local_index: &[SharedFileRecord],
    me: &ResponderIdentity,
) -> Option<QueryHitPayload> {
    if me.speed_kbps < u32::from(min_speed) {
        return None;
    }
    let results: Vec<_> = local_index
        .iter()
        .enumerate()
        .filter(|(_, f)| name_matches(criteria, &f.filename))
        .take(u8::MAX as usize)
        .map(|(i, f)| QueryHitResult {
            file_index: i as u32,
            file_size: f.size_bytes.min(u32::MAX as u64) as u32,
            file_name: f.filename.clone(),
        })
        .collect();
    if results.is_empty() {
        return None;
    }
    Some(QueryHitPayload {
        port: me.port,
        ip: me.ip,
        speed: me.speed_kbps,
        results,
        servent_id: me.servent_id,
    })
}

/// Queue priority, higher is more valuable:
/// push > queryHit > query > pong > ping.
pub fn priority(kind: PayloadKind) -> u8 {
    match kind {
        PayloadKind::Push => 4,
        PayloadKind::QueryHit => 3,
        PayloadKind::Query => 2,
        PayloadKind::Pong => 1,
        PayloadKind::Ping => 0,
    }
}

/// Index of the message to shed from an over-full queue ordered oldest
/// first: the lowest priority kind, oldest within that kind. `None` only
/// for an empty queue.
pub fn select_drop(queue: &[PayloadKind]) -> Option<usize> {
    queue
        .iter()
        .enumerate()
        .min_by_key(|(i, k)| (priority(**k), *i))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConnHealth {
    pub last_received_at: u64,
    pub last_sent_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop,
}

/// Drop a connection that delivered nothing for the health window, or that
/// carried nothing outbound for the window and ignored a TTL=1 ping.
pub fn connection_health(entry: &ConnHealth, now_ms: u64, ping_ttl1_answered: bool) -> Verdict {
    let quiet_in = now_ms.saturating_sub(entry.last_received_at) >= HEALTH_WINDOW_MS;
    let quiet_out = now_ms.saturating_sub(entry.last_sent_at) >= HEALTH_WINDOW_MS;
    if quiet_in || (quiet_out && !ping_ttl1_answered) {
        Verdict::Drop
    } else {
        Verdict::Keep
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("degree must be at least 1")]
    Degree,
    #[error("share fraction {0} outside [0, 1]")]
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    pub servents: u64,
    /// Set when `degree^ttl` overflowed and the value is clamped.
    pub saturated: bool,
}

/// Tree-model reach of a flood: `floor(degree^ttl * share_fraction)`.
pub fn coverage_estimate(degree: u64, ttl: u32, share_fraction: f64) -> Result<Coverage, CoverageError> {
    if degree == 0 {
        return Err(CoverageError::Degree);
    }
    if !(0.0..=1.0).contains(&share_fraction) {
        return Err(CoverageError::Fraction(share_fraction));
    }
    let (raw, saturated) = match degree.checked_pow(ttl) {
        Some(v) => (v, false),
        None => (u64::MAX, true),
    };
    let servents = if share_fraction == 1.0 {
        raw
    } else {
        (raw as f64 * share_fraction).floor() as u64
    };
    Ok(Coverage {
        servents,
        saturated,
    })
}
