use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use crate::gnutella::{DropReason, RoutingAction, Verb};
use crate::sim::churn::ChurnKind;
use crate::sim::engine::{Core, Driver, FtMessage, Global, SimMessage, Timer};
use crate::sim::scenario::{FaultKind, Protocol};
use crate::sim::topology::NodeRole;
use crate::sim::trace::TraceEvent;
use crate::superpeer::{
    bootstrap_assign, choose_role, failover_reassign, participation_update, registry_update,
    KnownSuper, NodeCapability, RegistryOp, Role, SuperNodeState, SuperRouter, Thresholds,
};
use crate::superpeer::routing::node;
use crate::types::{DescriptorId, NodeId};
use crate::wire::gnutella::{encode_descriptor, Descriptor, Payload, PayloadKind, QueryPayload};
use crate::wire::openft::{ChildMsg, ChildOp, NodeAddr, OpenFtPacket, OpenFtPayload, PacketKind};

const SEEN_CAPACITY: usize = 65_536;
const PARTICIPATION_PERIOD_MS: u64 = 60_000;

/// Two-tier overlay: super nodes index their children and flood queries
/// among themselves. FastTrack mode gives each child one parent; OpenFT
/// mode registers children with several search nodes and reports
/// statistics to an index node.
pub struct SuperpeerDriver {
    bench: Workbench,
    openft: bool,
    routers: BTreeMap<NodeId, SuperRouter>,
    parents: Vec<Vec<NodeId>>,
    asked: Vec<BTreeSet<NodeId>>,
    queries: HashMap<DescriptorId, u32>,
    hits: BTreeSet<(u32, NodeId, NodeId)>,
    index_node: Option<NodeId>,
    stats: BTreeMap<NodeId, (u32, u64)>,
    thresholds: Thresholds,
}

use super::{criteria_for, Workbench};

fn addr(n: NodeId) -> NodeAddr {
    NodeAddr { ip: n.ip(), port: n.port() }
}

fn packet(kind: PacketKind, payload: OpenFtPayload) -> SimMessage {
    SimMessage::OpenFt(OpenFtPacket { flags: 0, kind, payload })
}

fn child_msg(op: ChildOp, target: NodeId) -> SimMessage {
    packet(PacketKind::Child, OpenFtPayload::Child(ChildMsg { op, target: addr(target) }))
}

impl SuperpeerDriver {
    pub fn new(bench: Workbench) -> Self {
        let n = bench.topology.len();
        let openft = bench.scenario.protocol == Protocol::SuperpeerOpenft;
        Self {
            bench,
            openft,
            routers: BTreeMap::new(),
            parents: vec![Vec::new(); n],
            asked: vec![BTreeSet::new(); n],
            queries: HashMap::new(),
            hits: BTreeSet::new(),
            index_node: None,
            stats: BTreeMap::new(),
            thresholds: Thresholds::default(),
        }
    }

    fn wrap(&self, d: Descriptor) -> SimMessage {
        if self.openft {
            let bytes = encode_descriptor(&d).expect("routed descriptors encode");
            packet(PacketKind::Search, OpenFtPayload::Opaque(bytes))
        } else {
            SimMessage::FastTrack(FtMessage::Search(d))
        }
    }

    fn capability(&self, n: NodeId) -> NodeCapability {
        if self.bench.is_modem(n) {
            NodeCapability::modem()
        } else {
            NodeCapability::broadband()
        }
    }

    fn known_supers(&self) -> Vec<KnownSuper> {
        self.routers
            .values()
            .map(|r| KnownSuper {
                id: r.state.id,
                children: r.state.child_count() as u32,
                capacity: r.state.capacity as u32,
            })
            .collect()
    }

    /// Registers `child` with its parents. FastTrack asks the bootstrap
    /// node for the least-loaded super node unless the topology names one;
    /// OpenFT asks candidates near its home node, least loaded first.
    fn attach(&mut self, core: &mut Core, child: NodeId, fresh: bool) {
        let home = self
            .bench
            .neighbors(child)
            .iter()
            .copied()
            .find(|p| self.routers.contains_key(p) && core.is_alive(*p));
        if !self.openft {
            let parent = match (fresh, home) {
                (true, Some(h)) => Some(h),
                _ => bootstrap_assign(&self.capability(child), &self.thresholds, &self.known_supers(), 0)
                    .ok()
                    .and_then(|a| a.contacts.first().copied()),
            };
            if let Some(p) = parent {
                let shares = self.bench.files_of(child);
                core.send(child, p, SimMessage::FastTrack(FtMessage::Join { shares }));
            }
            return;
        }
        self.asked[child.0 as usize].clear();
        let k = self.bench.scenario.parents();
        for p in self.candidates(core, child, home).into_iter().take(k) {
            self.asked[child.0 as usize].insert(p);
            core.send(child, p, child_msg(ChildOp::Request, p));
        }
    }

    /// Live search nodes ordered by advertised load, the home node and its
    /// mesh neighbors first.
    fn candidates(&self, core: &Core, child: NodeId, home: Option<NodeId>) -> Vec<NodeId> {
        let mut near: Vec<NodeId> = Vec::new();
        if let Some(h) = home {
            near.push(h);
            let mut ring: Vec<NodeId> = self.routers[&h].state.super_peers.iter().copied().collect();
            ring.sort_by_key(|s| (self.routers.get(s).map_or(usize::MAX, |r| r.state.child_count()), *s));
            near.extend(ring);
        }
        let mut rest: Vec<NodeId> = self.routers.keys().copied().filter(|s| !near.contains(s)).collect();
        rest.sort_by_key(|s| (self.routers[s].state.child_count(), *s));
        near.extend(rest);
        near.into_iter()
            .filter(|s| core.is_alive(*s) && !self.asked[child.0 as usize].contains(s) && !self.parents[child.0 as usize].contains(s))
            .collect()
    }

    fn apply(&mut self, core: &mut Core, at: NodeId, actions: Vec<RoutingAction>) {
        for a in actions {
            match a.verb {
                Verb::Forward | Verb::ReplyBack => {
                    let to = node(a.conn().expect("transmitting action"));
                    let m = self.wrap(a.descriptor);
                    core.send(at, to, m);
                }
                Verb::Deliver => self.hit(core, at, &a.descriptor),
                Verb::Drop => {
                    let info = SimMessage::Gnutella(a.descriptor).info();
                    let reason = a.drop_reason.unwrap_or(DropReason::UnknownKind);
                    core.record(TraceEvent::RouteDrop { node: at, reason, info });
                }
            }
        }
    }

    fn hit(&mut self, core: &mut Core, at: NodeId, d: &Descriptor) {
        let Payload::QueryHit(h) = &d.payload else { return };
        let Some(&query) = self.queries.get(&d.id()) else { return };
        let Some(responder) = self.bench.by_sid(h.servent_id) else { return };
        // A child registered with several parents can be reported twice.
        if self.hits.insert((query, at, responder)) {
            core.record(TraceEvent::Hit { query, node: at, responder, results: h.results.len() as u32 });
        }
    }

    fn examined(&self, core: &mut Core, query: u32, at: NodeId, from: Option<NodeId>, include_self: bool) {
        if include_self {
            core.record(TraceEvent::Examined { query, node: at });
        }
        let kids: Vec<NodeId> = self.routers[&at].state.children().filter(|c| Some(*c) != from).collect();
        for c in kids {
            core.record(TraceEvent::Examined { query, node: c });
        }
    }

    fn on_super(&mut self, core: &mut Core, me: NodeId, src: NodeId, msg: SimMessage) {
        if let Some(d) = msg.descriptor() {
            let query = (d.kind() == PayloadKind::Query)
                .then(|| self.queries.get(&d.id()).copied())
                .flatten();
            let actions = self.routers.get_mut(&me).expect("super").route_query(src, d);
            let duplicate = matches!(actions.as_slice(), [a] if a.drop_reason == Some(DropReason::Duplicate));
            if let (Some(q), false) = (query, duplicate) {
                self.examined(core, q, me, Some(src), true);
            }
            self.apply(core, me, actions);
            return;
        }
        let state = &mut self.routers.get_mut(&me).expect("super").state;
        match msg {
            SimMessage::FastTrack(FtMessage::Join { shares }) => {
                if state.register_child(src, shares.clone()).is_ok() {
                    core.send(me, src, SimMessage::FastTrack(FtMessage::Welcome));
                    return;
                }
                // Full: the bootstrap node places the child elsewhere.
                let known: Vec<KnownSuper> = self.known_supers().into_iter().filter(|k| k.id != me).collect();
                let Ok(a) = bootstrap_assign(&self.capability(src), &self.thresholds, &known, 0) else { return };
                let p = a.contacts[0];
                if self.routers.get_mut(&p).expect("known").state.register_child(src, shares).is_ok() {
                    core.send(me, src, SimMessage::FastTrack(FtMessage::Reassigned { parent: p }));
                }
            }
            SimMessage::OpenFt(OpenFtPacket { kind, payload, .. }) => match (kind, payload) {
                (PacketKind::Child, OpenFtPayload::Child(ChildMsg { op: ChildOp::Request, .. })) => {
                    let op = if state.register_child(src, Vec::new()).is_ok() {
                        ChildOp::Accept
                    } else {
                        ChildOp::Deny
                    };
                    core.send(me, src, child_msg(op, src));
                }
                (PacketKind::AddShare, OpenFtPayload::Share(f)) => {
                    let _ = registry_update(state, src, RegistryOp::Add, &[f]);
                }
                (PacketKind::RemShare, OpenFtPayload::Share(f)) => {
                    let _ = registry_update(state, src, RegistryOp::Rem, &[f]);
                }
                (PacketKind::Stats, OpenFtPayload::KeyValues(kv)) => self.on_stats(core, me, src, &kv),
                _ => {}
            },
            _ => {}
        }
    }

    fn on_stats(&mut self, core: &mut Core, me: NodeId, from: NodeId, kv: &[(String, Vec<u8>)]) {
        if Some(me) != self.index_node {
            return;
        }
        let num = |key: &str| {
            kv.iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| <[u8; 8]>::try_from(v.as_slice()).ok())
                .map_or(0, u64::from_le_bytes)
        };
        self.stats.insert(from, (num("children") as u32, num("files")));
        core.record(TraceEvent::IndexSnapshot {
            node: me,
            supers: self.stats.len() as u32,
            children: self.stats.values().map(|s| s.0).sum(),
            files: self.stats.values().map(|s| s.1).sum(),
        });
    }

    fn on_child(&mut self, core: &mut Core, me: NodeId, src: NodeId, msg: SimMessage) {
        if let Some(d) = msg.descriptor() {
            if d.kind() == PayloadKind::QueryHit && self.parents[me.0 as usize].contains(&src) {
                self.hit(core, me, &d);
            }
            return;
        }
        let parents = &mut self.parents[me.0 as usize];
        match msg {
            SimMessage::FastTrack(FtMessage::Welcome) => *parents = vec![src],
            SimMessage::FastTrack(FtMessage::Reassigned { parent }) => *parents = vec![parent],
            SimMessage::OpenFt(OpenFtPacket {
                kind: PacketKind::Child,
                payload: OpenFtPayload::Child(ChildMsg { op, .. }),
                ..
            }) => match op {
                // Already registered by a failover; the shares came along.
                ChildOp::Accept if parents.contains(&src) => {}
                ChildOp::Accept => {
                    parents.push(src);
                    for f in self.bench.files_of(me) {
                        core.send(me, src, packet(PacketKind::AddShare, OpenFtPayload::Share(f)));
                    }
                }
                ChildOp::Deny => {
                    let home = self.bench.neighbors(me).first().copied().filter(|h| self.routers.contains_key(h));
                    if let Some(p) = self.candidates(core, me, home).first().copied() {
                        self.asked[me.0 as usize].insert(p);
                        core.send(me, p, child_msg(ChildOp::Request, p));
                    }
                }
                ChildOp::Request => {}
            },
            _ => {}
        }
    }

    fn issue(&mut self, core: &mut Core, i: u32) {
        let ready: Vec<bool> = (0..self.parents.len())
            .map(|n| {
                let id = NodeId(n as u32);
                core.is_alive(id) && (self.routers.contains_key(&id) || !self.parents[n].is_empty())
            })
            .collect();
        let Some((origin, file)) = self.bench.pick_query(core, |n| ready[n.0 as usize]) else {
            return;
        };
        let criteria = criteria_for(file);
        let ttl = self.bench.scenario.superpeer.ttl;
        let id = DescriptorId(core.rng.random());
        self.queries.insert(id, i);
        core.record(TraceEvent::QueryIssued { query: i, node: origin, criteria: criteria.clone(), ttl });
        if let Some(r) = self.routers.get_mut(&origin) {
            let actions = r.originate_query(id, &criteria, ttl);
            self.examined(core, i, origin, None, false);
            self.apply(core, origin, actions);
            return;
        }
        let d = Descriptor::new(id, ttl, 0, Payload::Query(QueryPayload { min_speed: 0, criteria }));
        for p in self.parents[origin.0 as usize].clone() {
            let m = self.wrap(d.clone());
            core.send(origin, p, m);
        }
    }

    /// Picks the super node to kill: the named one or the busiest.
    fn super_victim(&self, core: &Core, named: Option<u32>) -> Option<NodeId> {
        if let Some(n) = named {
            return Some(NodeId(n)).filter(|n| self.routers.contains_key(n));
        }
        self.routers
            .values()
            .filter(|r| core.is_alive(r.state.id) && Some(r.state.id) != self.index_node)
            .max_by_key(|r| (r.state.child_count(), std::cmp::Reverse(r.state.id)))
            .map(|r| r.state.id)
    }

    fn super_down(&mut self, core: &mut Core, failed: NodeId) {
        let Some(dead) = self.routers.remove(&failed) else { return };
        for r in self.routers.values_mut() {
            r.state.super_peers.remove(&failed);
        }
        self.stats.remove(&failed);
        let mut orphans = Vec::new();
        for c in dead.state.children() {
            let ps = &mut self.parents[c.0 as usize];
            ps.retain(|p| *p != failed);
            if ps.is_empty() && core.is_alive(c) {
                orphans.push((c, self.bench.files_of(c)));
            }
        }
        if orphans.is_empty() {
            return;
        }
        let mut live: Vec<&mut SuperNodeState> = self
            .routers
            .values_mut()
            .filter(|r| core.is_alive(r.state.id))
            .map(|r| &mut r.state)
            .collect();
        let outcome = failover_reassign(&mut live, orphans);
        core.record(TraceEvent::Failover {
            failed,
            reassigned: outcome.assignments.clone(),
            unattached: outcome.unattached.clone(),
        });
        for (c, p) in outcome.assignments {
            self.parents[c.0 as usize] = vec![p];
            let m = if self.openft {
                child_msg(ChildOp::Accept, c)
            } else {
                SimMessage::FastTrack(FtMessage::Reassigned { parent: p })
            };
            core.send(p, c, m);
        }
    }

    fn kill(&mut self, core: &mut Core, n: NodeId) {
        if core.leave(n) {
            self.on_leave(core, n);
        }
    }
}

impl Driver for SuperpeerDriver {
    fn start(&mut self, core: &mut Core) {
        let supers: Vec<NodeId> = self.bench.topology.with_role(NodeRole::Super).collect();
        let capacity = self.bench.scenario.superpeer.child_capacity;
        for &s in &supers {
            let mut state = SuperNodeState::with_capacity(s, capacity);
            state.super_peers = self
                .bench
                .neighbors(s)
                .iter()
                .copied()
                .filter(|p| self.bench.role(*p) == NodeRole::Super)
                .collect();
            self.routers.insert(s, SuperRouter::new(state, SEEN_CAPACITY));
        }
        if self.openft {
            // The first super node able to hold the directory also indexes.
            self.index_node = supers
                .iter()
                .copied()
                .find(|s| choose_role(Role::SearchAndIndex, &self.capability(*s), &self.thresholds).is_ok())
                .or(supers.first().copied());
            let period = self.bench.scenario.superpeer.stats_period_ms;
            if period > 0 {
                for &s in &supers {
                    let at = core.rng.random_range(0..period);
                    core.schedule_timer(at, s, Timer::Stats);
                }
            }
        }
        for &s in &supers {
            core.schedule_timer(PARTICIPATION_PERIOD_MS, s, Timer::Participation);
        }
        for c in self.bench.users().to_vec() {
            self.attach(core, c, true);
        }
        self.bench.schedule(core);
    }

    fn on_message(&mut self, core: &mut Core, src: NodeId, dst: NodeId, msg: SimMessage) {
        if self.routers.contains_key(&dst) {
            self.on_super(core, dst, src, msg);
        } else {
            self.on_child(core, dst, src, msg);
        }
    }

    fn on_timer(&mut self, core: &mut Core, node: NodeId, timer: Timer) {
        let now = core.now();
        let Some(r) = self.routers.get_mut(&node) else { return };
        match timer {
            Timer::Participation => {
                for level in r.state.participation.values_mut() {
                    *level = participation_update(*level, PARTICIPATION_PERIOD_MS / 1000);
                }
                core.schedule_timer(now + PARTICIPATION_PERIOD_MS, node, Timer::Participation);
            }
            Timer::Stats => {
                let children = r.state.child_count() as u64;
                let files: u64 = r
                    .state
                    .children()
                    .map(|c| r.state.shares_of(c).map_or(0, |s| s.len() as u64))
                    .sum();
                let kv = vec![
                    ("children".to_owned(), children.to_le_bytes().to_vec()),
                    ("files".to_owned(), files.to_le_bytes().to_vec()),
                ];
                match self.index_node {
                    Some(ix) if ix == node => self.on_stats(core, node, node, &kv),
                    Some(ix) => {
                        core.send(node, ix, packet(PacketKind::Stats, OpenFtPayload::KeyValues(kv)));
                    }
                    None => {}
                }
                let period = self.bench.scenario.superpeer.stats_period_ms;
                core.schedule_timer(now + period, node, Timer::Stats);
            }
            _ => {}
        }
    }

    fn on_global(&mut self, core: &mut Core, event: Global) {
        match event {
            Global::Query(i) => self.issue(core, i),
            Global::Fault(i) => {
                let f = self.bench.fault(i).clone();
                let victims: Vec<NodeId> = match f.kind {
                    FaultKind::KillSuper => self.super_victim(core, f.node).into_iter().collect(),
                    FaultKind::KillRandom => self.bench.random_victims(core, f.fraction),
                    FaultKind::KillNode => f.node.map(NodeId).into_iter().collect(),
                    FaultKind::KillCentral => self.index_node.into_iter().collect(),
                };
                for v in victims {
                    self.kill(core, v);
                }
            }
            Global::Churn(i) => {
                let join = self.bench.churn(i).kind == ChurnKind::Join;
                let Some(n) = self.bench.churn_target(core, join) else { return };
                if join {
                    if core.join(n) {
                        self.on_join(core, n);
                    }
                } else {
                    self.kill(core, n);
                }
            }
        }
    }

    fn on_leave(&mut self, core: &mut Core, node: NodeId) {
        if self.routers.contains_key(&node) {
            if Some(node) == self.index_node {
                self.index_node = None;
            }
            self.super_down(core, node);
            return;
        }
        for p in std::mem::take(&mut self.parents[node.0 as usize]) {
            if let Some(r) = self.routers.get_mut(&p) {
                r.state.remove_child(node);
                r.state.participation.remove(&node);
            }
        }
    }

    fn on_join(&mut self, core: &mut Core, node: NodeId) {
        if self.bench.role(node) == NodeRole::Child {
            self.attach(core, node, false);
        }
    }
}
