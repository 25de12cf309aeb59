use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::policy::{self, ConnHealth, ResponderIdentity, Verdict};
use super::seen::{ConnId, Origin, RouteKey, SeenTable};
use crate::types::{DescriptorId, ServentId, SharedFileRecord};
use crate::wire::gnutella::{
    Descriptor, Payload, PayloadKind, PongPayload, PushPayload, QueryHitPayload, QueryPayload,
};

/// Deliberate deviations from the routing rules, used to check that the
/// trace checker notices each one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleFault {
    /// Rule 1: originated descriptors are not remembered.
    ForgetOriginated,
    /// Rule 2: replies leave on some connection other than the reverse path.
    MisrouteReplies,
    /// Rule 3: broadcasts are also echoed to the connection they came from.
    EchoToSender,
    /// Rule 4: descriptors whose TTL reaches zero are still forwarded.
    IgnoreTtlExpiry,
    /// Rule 5: duplicates are processed as if new.
    ForwardDuplicates,
}

impl RuleFault {
    pub fn rule(self) -> u8 {
        match self {
            Self::ForgetOriginated => 1,
            Self::MisrouteReplies => 2,
            Self::EchoToSender => 3,
            Self::IgnoreTtlExpiry => 4,
            Self::ForwardDuplicates => 5,
        }
    }

    pub fn for_rule(rule: u8) -> Option<Self> {
        Some(match rule {
            1 => Self::ForgetOriginated,
            2 => Self::MisrouteReplies,
            3 => Self::EchoToSender,
            4 => Self::IgnoreTtlExpiry,
            5 => Self::ForwardDuplicates,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ServentConfig {
    pub servent_id: ServentId,
    pub ip: Ipv4Addr,
    pub port: u16,
    pub speed_kbps: u32,
    pub initial_ttl: u8,
    pub max_neighbors: usize,
    pub ping_period_ms: u64,
    /// Periodic pings only go out while the neighbor count is at or below
    /// this value; `None` pings unconditionally.
    pub ping_threshold: Option<usize>,
    pub pong_caching: bool,
    pub pong_cache_capacity: usize,
    pub seen_capacity: usize,
    pub firewalled: bool,
    pub fault: Option<RuleFault>,
}

impl ServentConfig {
    pub fn new(servent_id: ServentId, ip: Ipv4Addr, port: u16) -> Self {
        Self {
            servent_id,
            ip,
            port,
            speed_kbps: 256,
            initial_ttl: 7,
            max_neighbors: 8,
            ping_period_ms: 3_000,
            ping_threshold: Some(2),
            pong_caching: false,
            pong_cache_capacity: 32,
            seen_capacity: 65_536,
            firewalled: false,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Forward,
    ReplyBack,
    Deliver,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Conn(ConnId),
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    TtlExpired,
    NoReverseRoute,
    UnknownKind,
}

/// One routing decision, as data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingAction {
    pub verb: Verb,
    pub target: Target,
    pub descriptor: Descriptor,
    pub drop_reason: Option<DropReason>,
}

impl RoutingAction {
    fn send(verb: Verb, conn: ConnId, descriptor: Descriptor) -> Self {
        Self {
            verb,
            target: Target::Conn(conn),
            descriptor,
            drop_reason: None,
        }
    }

    fn deliver(descriptor: Descriptor) -> Self {
        Self {
            verb: Verb::Deliver,
            target: Target::Local,
            descriptor,
            drop_reason: None,
        }
    }

    fn drop(descriptor: Descriptor, reason: DropReason) -> Self {
        Self {
            verb: Verb::Drop,
            target: Target::Local,
            descriptor,
            drop_reason: Some(reason),
        }
    }

    /// Connection this action transmits on, if any.
    pub fn conn(&self) -> Option<ConnId> {
        match (self.verb, self.target) {
            (Verb::Forward | Verb::ReplyBack, Target::Conn(c)) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PushError {
    #[error("file index {0} is not in the hit's result set")]
    UnknownFileIndex(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedPong {
    pub pong: PongPayload,
    pub hops_observed: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HealthAction {
    /// Send a TTL=1 ping on this connection.
    Probe(ConnId),
    Disconnect(ConnId),
}

#[derive(Debug, Clone, Copy, Default)]
struct ConnState {
    health: ConnHealth,
    probe_outstanding: bool,
}

/// Gnutella servent: routing memory, pong cache, local index and
/// per-connection health clocks.
#[derive(Debug)]
pub struct Servent {
    config: ServentConfig,
    conns: BTreeMap<ConnId, ConnState>,
    seen: SeenTable,
    pong_cache: Vec<CachedPong>,
    local_index: Vec<SharedFileRecord>,
    rng: ChaCha8Rng,
}

impl Servent {
    pub fn new(config: ServentConfig) -> Self {
        let mut seed = [0u8; 32];
        seed[..16].copy_from_slice(config.servent_id.as_bytes());
        Self {
            seen: SeenTable::new(config.seen_capacity),
            config,
            conns: BTreeMap::new(),
            pong_cache: Vec::new(),
            local_index: Vec::new(),
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn config(&self) -> &ServentConfig {
        &self.config
    }

    pub fn servent_id(&self) -> ServentId {
        self.config.servent_id
    }

    pub fn neighbors(&self) -> impl Iterator<Item = ConnId> + '_ {
        self.conns.keys().copied()
    }

    pub fn neighbor_count(&self) -> usize {
        self.conns.len()
    }

    pub fn free_slots(&self) -> usize {
        self.config.max_neighbors.saturating_sub(self.conns.len())
    }

    pub fn add_neighbor(&mut self, conn: ConnId, now_ms: u64) -> bool {
        if self.free_slots() == 0 || self.conns.contains_key(&conn) {
            return false;
        }
        self.conns.insert(
            conn,
            ConnState {
                health: ConnHealth {
                    last_received_at: now_ms,
                    last_sent_at: now_ms,
                },
                probe_outstanding: false,
            },
        );
        true
    }

    pub fn remove_neighbor(&mut self, conn: ConnId) -> bool {
        self.conns.remove(&conn).is_some()
    }

    pub fn share(&mut self, file: SharedFileRecord) {
        self.local_index.push(file);
    }

    pub fn local_index(&self) -> &[SharedFileRecord] {
        &self.local_index
    }

    pub fn pong_cache(&self) -> &[CachedPong] {
        &self.pong_cache
    }

    pub fn seen_len(&self) -> usize {
        self.seen.len()
    }

    pub fn identity(&self) -> ResponderIdentity {
        ResponderIdentity {
            servent_id: self.config.servent_id,
            ip: self.config.ip,
            port: self.config.port,
            speed_kbps: self.config.speed_kbps,
        }
    }

    pub fn own_pong(&self) -> PongPayload {
        PongPayload {
            port: self.config.port,
            ip: self.config.ip,
            files_shared: self.local_index.len() as u32,
            kilobytes_shared: self
                .local_index
                .iter()
                .map(|f| f.size_kb())
                .sum::<u64>()
                .min(u32::MAX as u64) as u32,
        }
    }

    pub fn wants_periodic_ping(&self) -> bool {
        self.config
            .ping_threshold
            .is_none_or(|t| self.conns.len() <= t)
    }

    fn fresh_id(&mut self) -> DescriptorId {
        DescriptorId(self.rng.random())
    }

    fn fault(&self, f: RuleFault) -> bool {
        self.config.fault == Some(f)
    }

    fn remember_own(&mut self, d: &Descriptor) {
        if !self.fault(RuleFault::ForgetOriginated) {
            self.seen.insert(RouteKey::of(d), Origin::Local);
        }
    }

    fn broadcast(&self, d: &Descriptor, except: Option<ConnId>) -> Vec<RoutingAction> {
        let echo = self.fault(RuleFault::EchoToSender);
        self.conns
            .keys()
            .filter(|c| echo || Some(**c) != except)
            .map(|c| RoutingAction::send(Verb::Forward, *c, d.clone()))
            .collect()
    }

    /// Starts a query flood with the configured initial TTL.
    pub fn originate_query(&mut self, criteria: &str, min_speed: u16) -> (DescriptorId, Vec<RoutingAction>) {
        let id = self.fresh_id();
        let d = Descriptor::new(
            id,
            self.config.initial_ttl,
            0,
            Payload::Query(QueryPayload {
                min_speed,
                criteria: criteria.to_owned(),
            }),
        );
        self.remember_own(&d);
        (id, self.broadcast(&d, None))
    }

    /// Starts a ping. A TTL of 1 probes direct neighbors only.
    pub fn originate_ping(&mut self, ttl: u8) -> (DescriptorId, Vec<RoutingAction>) {
        let id = self.fresh_id();
        let d = Descriptor::new(id, ttl, 0, Payload::Ping);
        self.remember_own(&d);
        (id, self.broadcast(&d, None))
    }

    /// Ping carried on a single connection, used for health probes.
    pub fn probe(&mut self, conn: ConnId) -> RoutingAction {
        let id = self.fresh_id();
        let d = Descriptor::new(id, 1, 0, Payload::Ping);
        self.remember_own(&d);
        if let Some(s) = self.conns.get_mut(&conn) {
            s.probe_outstanding = true;
        }
        RoutingAction::send(Verb::Forward, conn, d)
    }

    /// Builds a push asking the servent behind `hit` to open a connection
    /// back to us for `file_index`. The push reuses the hit's descriptor
    /// id so relays can retrace the hit's path.
    pub fn initiate_push(
        &self,
        hit_id: DescriptorId,
        hit: &QueryHitPayload,
        file_index: u32,
    ) -> Result<Descriptor, PushError> {
        if !hit.results.iter().any(|r| r.file_index == file_index) {
            return Err(PushError::UnknownFileIndex(file_index));
        }
        Ok(Descriptor::new(
            hit_id,
            self.config.initial_ttl,
            0,
            Payload::Push(PushPayload {
                servent_id: hit.servent_id,
                file_index,
                ip: self.config.ip,
                port: self.config.port,
            }),
        ))
    }

    /// Routes a push we built toward the hit's sender.
    pub fn send_push(&mut self, push: Descriptor) -> RoutingAction {
        let key = RouteKey::of(&push);
        self.remember_own(&push);
        let req = key.request().expect("push retraces a hit");
        match self.seen.lookup(&req) {
            Some(Origin::Conn(c)) if self.conns.contains_key(&c) => {
                let c = self.misroute(c);
                RoutingAction::send(Verb::ReplyBack, c, push)
            }
            _ => RoutingAction::drop(push, DropReason::NoReverseRoute),
        }
    }

    fn misroute(&self, correct: ConnId) -> ConnId {
        if self.fault(RuleFault::MisrouteReplies) {
            self.conns.keys().copied().find(|c| *c != correct).unwrap_or(correct)
        } else {
            correct
        }
    }

    fn reply(&self, conn: ConnId, request: &Descriptor, payload: Payload) -> RoutingAction {
        let d = Descriptor::new(
            request.id(),
            request.header.hops.saturating_add(1),
            0,
            payload,
        );
        RoutingAction::send(Verb::ReplyBack, self.misroute(conn), d)
    }

    pub fn pong_cache_answer(&self, ping: &crate::wire::gnutella::DescriptorHeader) -> Vec<PongPayload> {
        std::iter::once(self.own_pong())
            .chain(self.cached_below(ping.ttl).map(|c| c.pong.clone()))
            .collect()
    }

    fn cached_below(&self, n: u8) -> impl Iterator<Item = &CachedPong> + '_ {
        self.pong_cache.iter().filter(move |c| c.hops_observed < n)
    }

    fn cache_pong(&mut self, pong: &PongPayload, hops_observed: u8) {
        if pong.ip == self.config.ip && pong.port == self.config.port {
            return;
        }
        self.pong_cache
            .retain(|c| !(c.pong.ip == pong.ip && c.pong.port == pong.port));
        self.pong_cache.push(CachedPong {
            pong: pong.clone(),
            hops_observed,
        });
        if self.pong_cache.len() > self.config.pong_cache_capacity {
            self.pong_cache.remove(0);
        }
    }

    /// Records traffic for the health clocks.
    pub fn note_received(&mut self, conn: ConnId, now_ms: u64, kind: PayloadKind) {
        if let Some(s) = self.conns.get_mut(&conn) {
            s.health.last_received_at = now_ms;
            if kind == PayloadKind::Pong {
                s.probe_outstanding = false;
            }
        }
    }

    pub fn note_sent(&mut self, conn: ConnId, now_ms: u64) {
        if let Some(s) = self.conns.get_mut(&conn) {
            s.health.last_sent_at = now_ms;
        }
    }

    pub fn conn_health(&self, conn: ConnId) -> Option<ConnHealth> {
        self.conns.get(&conn).map(|s| s.health)
    }

    /// Applies the health rules to every connection. Idle outbound
    /// connections get a TTL=1 probe first; a probe still unanswered when
    /// the connection is next found idle gets it dropped.
    pub fn check_connections(&mut self, now_ms: u64) -> Vec<HealthAction> {
        let mut out = Vec::new();
        for (conn, s) in &self.conns {
            let verdict = policy::connection_health(&s.health, now_ms, !s.probe_outstanding);
            let idle_out = now_ms.saturating_sub(s.health.last_sent_at) >= policy::HEALTH_WINDOW_MS;
            if verdict == Verdict::Drop {
                out.push(HealthAction::Disconnect(*conn));
            } else if idle_out {
                out.push(HealthAction::Probe(*conn));
            }
        }
        out
    }

    /// Applies routing Rules 1-5 to a descriptor that arrived on `arrival`.
    pub fn handle_descriptor(&mut self, arrival: ConnId, d: Descriptor) -> Vec<RoutingAction> {
        let key = RouteKey::of(&d);
        let fresh = self.seen.insert(key, Origin::Conn(arrival));
        if !fresh && !self.fault(RuleFault::ForwardDuplicates) {
            return vec![RoutingAction::drop(d, DropReason::Duplicate)];
        }
        match d.kind() {
            PayloadKind::Ping => self.on_ping(arrival, d),
            PayloadKind::Query => self.on_query(arrival, d),
            PayloadKind::Pong | PayloadKind::QueryHit | PayloadKind::Push => self.on_reply(key, d),
        }
    }

    fn forward_actions(&self, arrival: ConnId, d: &Descriptor) -> Option<Vec<RoutingAction>> {
        let ttl = d.header.ttl.saturating_sub(1);
        if ttl == 0 && !self.fault(RuleFault::IgnoreTtlExpiry) {
            return None;
        }
        let mut next = d.clone();
        next.header.ttl = ttl;
        next.header.hops = d.header.hops.saturating_add(1);
        Some(self.broadcast(&next, Some(arrival)))
    }

    fn finish(&self, mut out: Vec<RoutingAction>, d: Descriptor, forwards: Option<Vec<RoutingAction>>) -> Vec<RoutingAction> {
        match forwards {
            Some(f) => out.extend(f),
            None if out.is_empty() => out.push(RoutingAction::drop(d, DropReason::TtlExpired)),
            None => {}
        }
        out
    }

    fn on_ping(&mut self, arrival: ConnId, d: Descriptor) -> Vec<RoutingAction> {
        let mut out = vec![self.reply(arrival, &d, Payload::Pong(self.own_pong()))];
        if self.config.pong_caching {
            let ttl = d.header.hops.saturating_add(1);
            let cached: Vec<_> = self.cached_below(d.header.ttl).cloned().collect();
            for c in cached {
                let mut r = Descriptor::new(d.id(), ttl, 0, Payload::Pong(c.pong));
                r.header.hops = c.hops_observed;
                out.push(RoutingAction::send(Verb::ReplyBack, self.misroute(arrival), r));
            }
            return out;
        }
        let fwd = self.forward_actions(arrival, &d);
        self.finish(out, d, fwd)
    }

    fn on_query(&mut self, arrival: ConnId, d: Descriptor) -> Vec<RoutingAction> {
        let Payload::Query(q) = &d.payload else {
            unreachable!("kind checked by caller")
        };
        let mut out = Vec::new();
        if let Some(hit) = policy::answer_query(&q.criteria, q.min_speed, &self.local_index, &self.identity()) {
            let reply = self.reply(arrival, &d, Payload::QueryHit(hit));
            self.seen.insert(RouteKey::of(&reply.descriptor), Origin::Local);
            out.push(reply);
        }
        let fwd = self.forward_actions(arrival, &d);
        self.finish(out, d, fwd)
    }

    fn on_reply(&mut self, key: RouteKey, d: Descriptor) -> Vec<RoutingAction> {
        if self.config.pong_caching {
            if let Payload::Pong(p) = &d.payload {
                self.cache_pong(p, d.header.hops.saturating_add(1));
            }
        }
        let req = key.request().expect("replies have a request kind");
        match self.seen.lookup(&req) {
            Some(Origin::Local) => vec![RoutingAction::deliver(d)],
            Some(Origin::Conn(c)) if self.conns.contains_key(&c) => {
                let ttl = d.header.ttl.saturating_sub(1);
                if ttl == 0 && !self.fault(RuleFault::IgnoreTtlExpiry) {
                    return vec![RoutingAction::drop(d, DropReason::TtlExpired)];
                }
                let mut next = d;
                next.header.ttl = ttl;
                next.header.hops = next.header.hops.saturating_add(1);
                vec![RoutingAction::send(Verb::ReplyBack, self.misroute(c), next)]
            }
            _ => vec![RoutingAction::drop(d, DropReason::NoReverseRoute)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::gnutella::QueryHitResult;

    fn servent(n: u8) -> Servent {
        let mut s = Servent::new(ServentConfig::new(
            ServentId([n; 16]),
            Ipv4Addr::new(10, 0, 0, n),
            6346,
        ));
        for c in 1..=4 {
            s.add_neighbor(ConnId(c), 0);
        }
        s
    }

    fn query(id: u8, ttl: u8, hops: u8, text: &str) -> Descriptor {
        Descriptor::new(
            DescriptorId([id; 16]),
            ttl,
            hops,
            Payload::Query(QueryPayload {
                min_speed: 0,
                criteria: text.into(),
            }),
        )
    }

    #[test]
    fn last_hop_query_answers_without_forwarding() {
        let mut s = servent(9);
        s.share(SharedFileRecord::synthetic("needle.mp3", 10));
        let acts = s.handle_descriptor(ConnId(1), query(1, 1, 6, "needle"));
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].verb, Verb::ReplyBack);
        assert_eq!(acts[0].target, Target::Conn(ConnId(1)));
        let h = &acts[0].descriptor.header;
        assert_eq!(h.payload_kind, PayloadKind::QueryHit);
        assert_eq!(h.descriptor_id, DescriptorId([1; 16]));
        assert_eq!((h.ttl, h.hops), (7, 0));
    }

    #[test]
    fn duplicate_is_dropped_alone() {
        let mut s = servent(9);
        s.share(SharedFileRecord::synthetic("needle.mp3", 10));
        s.handle_descriptor(ConnId(1), query(1, 1, 6, "needle"));
        let acts = s.handle_descriptor(ConnId(2), query(1, 1, 6, "needle"));
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].verb, Verb::Drop);
        assert_eq!(acts[0].drop_reason, Some(DropReason::Duplicate));
    }

    #[test]
    fn forwards_to_everyone_but_sender() {
        let mut s = servent(9);
        let acts = s.handle_descriptor(ConnId(2), query(3, 7, 0, "x"));
        let targets: Vec<_> = acts.iter().filter_map(|a| a.conn()).collect();
        assert_eq!(targets, vec![ConnId(1), ConnId(3), ConnId(4)]);
        for a in &acts {
            assert_eq!(a.verb, Verb::Forward);
            assert_eq!((a.descriptor.header.ttl, a.descriptor.header.hops), (6, 1));
        }
    }

    #[test]
    fn unmatched_last_hop_query_expires() {
        let mut s = servent(9);
        let acts = s.handle_descriptor(ConnId(2), query(3, 1, 6, "x"));
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].drop_reason, Some(DropReason::TtlExpired));
    }

    #[test]
    fn orphan_pong_is_dropped() {
        let mut s = servent(9);
        let pong = Descriptor::new(
            DescriptorId([9; 16]),
            3,
            1,
            Payload::Pong(PongPayload {
                port: 1,
                ip: Ipv4Addr::LOCALHOST,
                files_shared: 0,
                kilobytes_shared: 0,
            }),
        );
        let acts = s.handle_descriptor(ConnId(1), pong);
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].drop_reason, Some(DropReason::NoReverseRoute));
    }

    #[test]
    fn hit_retraces_query_and_push_retraces_hit() {
        let mut relay = servent(5);
        relay.handle_descriptor(ConnId(2), query(7, 5, 2, "song"));
        let hit = QueryHitPayload {
            port: 6346,
            ip: Ipv4Addr::new(10, 0, 0, 99),
            speed: 1,
            results: vec![QueryHitResult {
                file_index: 4,
                file_size: 10,
                file_name: "song.mp3".into(),
            }],
            servent_id: ServentId([99; 16]),
        };
        let hit_d = Descriptor::new(DescriptorId([7; 16]), 3, 0, Payload::QueryHit(hit.clone()));
        let acts = relay.handle_descriptor(ConnId(3), hit_d);
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].verb, Verb::ReplyBack);
        assert_eq!(acts[0].target, Target::Conn(ConnId(2)));
        assert_eq!((acts[0].descriptor.header.ttl, acts[0].descriptor.header.hops), (2, 1));

        let requester = servent(1);
        let push = requester
            .initiate_push(DescriptorId([7; 16]), &hit, 4)
            .unwrap();
        match &push.payload {
            Payload::Push(p) => {
                assert_eq!(p.servent_id, ServentId([99; 16]));
                assert_eq!(p.ip, Ipv4Addr::new(10, 0, 0, 1));
            }
            other => panic!("{other:?}"),
        }
        let acts = relay.handle_descriptor(ConnId(2), push.clone());
        assert_eq!(acts[0].target, Target::Conn(ConnId(3)));

        let mut stranger = servent(6);
        let acts = stranger.handle_descriptor(ConnId(1), push);
        assert_eq!(acts[0].drop_reason, Some(DropReason::NoReverseRoute));

        assert_eq!(
            requester.initiate_push(DescriptorId([7; 16]), &hit, 5),
            Err(PushError::UnknownFileIndex(5))
        );
    }

    #[test]
    fn responder_delivers_push_addressed_to_it() {
        let mut r = servent(8);
        r.share(SharedFileRecord::synthetic("a.mp3", 1));
        let acts = r.handle_descriptor(ConnId(1), query(2, 3, 0, "a"));
        let Payload::QueryHit(hit) = acts[0].descriptor.payload.clone() else {
            panic!()
        };
        let push = servent(1).initiate_push(DescriptorId([2; 16]), &hit, 0).unwrap();
        let acts = r.handle_descriptor(ConnId(1), push);
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[0].verb, Verb::Deliver);
    }

    fn cached(hops: &[u8]) -> Servent {
        let mut s = servent(9);
        s.config.pong_caching = true;
        for (i, h) in hops.iter().enumerate() {
            s.cache_pong(
                &PongPayload {
                    port: 1,
                    ip: Ipv4Addr::new(1, 1, 1, i as u8),
                    files_shared: 0,
                    kilobytes_shared: 0,
                },
                *h,
            );
        }
        s
    }

    #[test]
    fn pong_cache_answer_cases() {
        let ping = |ttl| Descriptor::new(DescriptorId([1; 16]), ttl, 0, Payload::Ping).header;
        assert_eq!(cached(&[1, 3, 8]).pong_cache_answer(&ping(7)).len(), 3);
        assert_eq!(cached(&[1, 3, 8]).pong_cache_answer(&ping(1)).len(), 1);
        assert_eq!(cached(&[]).pong_cache_answer(&ping(7)).len(), 1);
    }

    #[test]
    fn cached_ping_is_not_forwarded() {
        let mut s = cached(&[1, 2]);
        let acts = s.handle_descriptor(ConnId(1), Descriptor::new(DescriptorId([4; 16]), 7, 0, Payload::Ping));
        assert_eq!(acts.len(), 3);
        assert!(acts.iter().all(|a| a.verb == Verb::ReplyBack && a.target == Target::Conn(ConnId(1))));
    }

    #[test]
    fn faults_change_behavior() {
        let mut s = servent(9);
        s.config.fault = Some(RuleFault::EchoToSender);
        let acts = s.handle_descriptor(ConnId(2), query(3, 7, 0, "x"));
        assert!(acts.iter().any(|a| a.conn() == Some(ConnId(2))));

        let mut s = servent(9);
        s.config.fault = Some(RuleFault::IgnoreTtlExpiry);
        let acts = s.handle_descriptor(ConnId(2), query(3, 1, 6, "x"));
        assert!(acts.iter().all(|a| a.verb == Verb::Forward && a.descriptor.header.ttl == 0));

        let mut s = servent(9);
        s.config.fault = Some(RuleFault::ForwardDuplicates);
        s.handle_descriptor(ConnId(2), query(3, 7, 0, "x"));
        let again = s.handle_descriptor(ConnId(1), query(3, 7, 0, "x"));
        assert!(again.iter().any(|a| a.verb == Verb::Forward));

        let mut s = servent(9);
        s.config.fault = Some(RuleFault::ForgetOriginated);
        let (id, _) = s.originate_query("x", 0);
        let back = Descriptor::new(id, 5, 2, query(0, 1, 1, "x").payload);
        assert!(s.handle_descriptor(ConnId(1), back).iter().any(|a| a.verb == Verb::Forward));
    }

    #[test]
    fn health_probe_then_drop() {
        let mut s = servent(9);
        for c in 1..=4 {
            s.note_received(ConnId(c), 9_000, PayloadKind::Query);
        }
        assert_eq!(s.check_connections(5_000), vec![]);
        let acts = s.check_connections(10_000);
        assert_eq!(acts.len(), 4);
        assert!(acts.iter().all(|a| matches!(a, HealthAction::Probe(_))));
        s.probe(ConnId(1));
        assert_eq!(s.check_connections(19_500), vec![HealthAction::Disconnect(ConnId(1)), HealthAction::Disconnect(ConnId(2)), HealthAction::Disconnect(ConnId(3)), HealthAction::Disconnect(ConnId(4))]);
    }

    #[test]
    fn ping_threshold() {
        let mut s = servent(1);
        assert!(!s.wants_periodic_ping());
        s.remove_neighbor(ConnId(1));
        s.remove_neighbor(ConnId(2));
        assert!(s.wants_periodic_ping());
        s.config.ping_threshold = None;
        for c in 10..20 {
            s.add_neighbor(ConnId(c), 0);
        }
        assert!(s.wants_periodic_ping());
    }
}
