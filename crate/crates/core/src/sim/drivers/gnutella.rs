use crate::gnutella::{
    policy::connect_request, handshake, ConnId, DropReason, HealthAction, RoutingAction, Servent, ServentConfig, Verb,
};
use crate::sim::engine::{Core, Driver, Global, SimMessage, Timer};
use crate::sim::scenario::FaultKind;
use crate::sim::trace::{Opener, TraceEvent};
use crate::sim::churn::ChurnKind;
use crate::types::NodeId;
use crate::wire::gnutella::{Descriptor, Payload, PayloadKind};

use super::{criteria_for, Workbench};

const HEALTH_PERIOD_MS: u64 = 1_000;

/// Flat Gnutella overlay: one servent per node.
pub struct GnutellaDriver {
    bench: Workbench,
    servents: Vec<Option<Servent>>,
    firewalled: Vec<bool>,
    queries: std::collections::HashMap<crate::types::DescriptorId, u32>,
}

impl GnutellaDriver {
    pub fn new(bench: Workbench, firewalled: Vec<bool>) -> Self {
        let n = bench.topology.len();
        Self {
            bench,
            servents: (0..n).map(|_| None).collect(),
            firewalled,
            queries: Default::default(),
        }
    }

    fn make_servent(&self, n: NodeId) -> Servent {
        let spec = &self.bench.scenario.gnutella;
        let mut cfg = ServentConfig::new(n.servent_id(), n.ip(), n.port());
        cfg.initial_ttl = spec.ttl;
        cfg.max_neighbors = spec.max_neighbors;
        cfg.ping_period_ms = spec.ping_period_ms;
        cfg.ping_threshold = (!spec.ping_always).then_some(spec.ping_threshold);
        cfg.pong_caching = self.bench.scenario.toggles.pong_caching;
        cfg.pong_cache_capacity = spec.pong_cache_capacity;
        cfg.firewalled = self.firewalled[n.0 as usize];
        cfg.fault = spec.fault;
        if self.bench.is_modem(n) {
            cfg.speed_kbps = 56;
        }
        let mut s = Servent::new(cfg);
        for f in self.bench.files_of(n) {
            s.share(f);
        }
        s
    }

    fn servent(&mut self, n: NodeId) -> Option<&mut Servent> {
        self.servents[n.0 as usize].as_mut()
    }

    /// `a` dials `b`; both sides need a free slot.
    fn connect(&mut self, core: &mut Core, a: NodeId, b: NodeId) -> bool {
        let (Some(sa), Some(sb)) = (&self.servents[a.0 as usize], &self.servents[b.0 as usize]) else {
            return false;
        };
        if sa.neighbors().any(|c| c.0 == b.0) {
            return false;
        }
        let accepted = sa.free_slots() > 0 && handshake(&connect_request(), sb.free_slots()).is_accept();
        core.record(TraceEvent::Handshake { a, b, accepted });
        if accepted {
            let now = core.now();
            self.servent(a).expect("checked").add_neighbor(ConnId(b.0), now);
            self.servent(b).expect("checked").add_neighbor(ConnId(a.0), now);
        }
        accepted
    }

    fn disconnect(&mut self, a: NodeId, b: NodeId) {
        if let Some(s) = self.servent(a) {
            s.remove_neighbor(ConnId(b.0));
        }
        if let Some(s) = self.servent(b) {
            s.remove_neighbor(ConnId(a.0));
        }
    }

    fn start_timers(&self, core: &mut Core, n: NodeId) {
        let spec = &self.bench.scenario.gnutella;
        let now = core.now();
        if spec.ping_period_ms > 0 {
            let offset = rand::Rng::random_range(&mut core.rng, 0..spec.ping_period_ms);
            core.schedule_timer(now + offset, n, Timer::Ping);
        }
        if self.bench.scenario.toggles.health_checks {
            core.schedule_timer(now + HEALTH_PERIOD_MS, n, Timer::Health);
        }
    }

    fn apply(&mut self, core: &mut Core, node: NodeId, actions: Vec<RoutingAction>) {
        for a in actions {
            match a.verb {
                Verb::Forward | Verb::ReplyBack => {
                    let c = a.conn().expect("transmitting action");
                    core.send(node, NodeId(c.0), SimMessage::Gnutella(a.descriptor));
                    let now = core.now();
                    if let Some(s) = self.servent(node) {
                        s.note_sent(c, now);
                    }
                }
                Verb::Deliver => self.deliver(core, node, a.descriptor),
                Verb::Drop => {
                    let info = SimMessage::Gnutella(a.descriptor).info();
                    let reason = a.drop_reason.unwrap_or(DropReason::UnknownKind);
                    core.record(TraceEvent::RouteDrop { node, reason, info });
                }
            }
        }
    }

    fn deliver(&mut self, core: &mut Core, node: NodeId, d: Descriptor) {
        match &d.payload {
            Payload::QueryHit(hit) => {
                let Some(&query) = self.queries.get(&d.id()) else {
                    return;
                };
                let Some(responder) = self.bench.by_sid(hit.servent_id) else {
                    return;
                };
                core.record(TraceEvent::Hit {
                    query,
                    node,
                    responder,
                    results: hit.results.len() as u32,
                });
                let wants_push = self.bench.scenario.gnutella.push_on_hit && self.firewalled[responder.0 as usize];
                if let (true, Some(first)) = (wants_push, hit.results.first()) {
                    let Some(s) = self.servent(node) else { return };
                    let push = s.initiate_push(d.id(), hit, first.file_index).expect("index from the hit");
                    let action = s.send_push(push);
                    self.apply(core, node, vec![action]);
                }
            }
            Payload::Push(p) => {
                let Some(s) = self.servents[node.0 as usize].as_ref() else { return };
                let Some(file) = s.local_index().get(p.file_index as usize) else { return };
                let Some(downloader) = self.bench.by_ip(p.ip) else { return };
                core.record(TraceEvent::Transfer {
                    uploader: node,
                    downloader,
                    opened_by: Opener::Uploader,
                    filename: file.filename.clone(),
                    offset: 0,
                    bytes: file.size_bytes,
                });
            }
            _ => {}
        }
    }

    fn leave(&mut self, core: &mut Core, n: NodeId) {
        if !core.leave(n) {
            return;
        }
        self.on_leave(core, n);
    }

    fn join(&mut self, core: &mut Core, n: NodeId) {
        if !core.join(n) {
            return;
        }
        self.on_join(core, n);
    }
}

impl Driver for GnutellaDriver {
    fn start(&mut self, core: &mut Core) {
        for i in 0..self.servents.len() {
            let n = NodeId(i as u32);
            self.servents[i] = Some(self.make_servent(n));
        }
        let edges: Vec<_> = self.bench.topology.edges.iter().map(|e| (e.a, e.b)).collect();
        for (a, b) in edges {
            self.connect(core, a, b);
        }
        for i in 0..self.servents.len() {
            self.start_timers(core, NodeId(i as u32));
        }
        self.bench.schedule(core);
    }

    fn on_message(&mut self, core: &mut Core, src: NodeId, dst: NodeId, msg: SimMessage) {
        let SimMessage::Gnutella(d) = msg else { return };
        let now = core.now();
        let Some(s) = self.servent(dst) else { return };
        let conn = ConnId(src.0);
        // Data still in flight on a connection that has since closed.
        if !s.neighbors().any(|c| c == conn) {
            return;
        }
        s.note_received(conn, now, d.kind());
        let query = (d.kind() == PayloadKind::Query)
            .then(|| self.queries.get(&d.id()).copied())
            .flatten();
        let s = self.servent(dst).expect("checked");
        let actions = s.handle_descriptor(conn, d);
        let duplicate = matches!(actions.as_slice(), [a] if a.drop_reason == Some(DropReason::Duplicate));
        if let (Some(query), false) = (query, duplicate) {
            core.record(TraceEvent::Examined { query, node: dst });
        }
        self.apply(core, dst, actions);
    }

    fn on_timer(&mut self, core: &mut Core, node: NodeId, timer: Timer) {
        let now = core.now();
        match timer {
            Timer::Ping => {
                let spec = &self.bench.scenario.gnutella;
                let (ttl, period) = (spec.ping_ttl, spec.ping_period_ms);
                let Some(s) = self.servent(node) else { return };
                if s.wants_periodic_ping() {
                    let (_, actions) = s.originate_ping(ttl);
                    self.apply(core, node, actions);
                }
                core.schedule_timer(now + period, node, Timer::Ping);
            }
            Timer::Health => {
                let Some(s) = self.servent(node) else { return };
                for h in s.check_connections(now) {
                    match h {
                        HealthAction::Probe(c) => {
                            let a = self.servent(node).expect("alive").probe(c);
                            self.apply(core, node, vec![a]);
                        }
                        HealthAction::Disconnect(c) => {
                            let peer = NodeId(c.0);
                            self.disconnect(node, peer);
                            core.record(TraceEvent::LinkFail { a: node, b: peer });
                        }
                    }
                }
                core.schedule_timer(now + HEALTH_PERIOD_MS, node, Timer::Health);
            }
            _ => {}
        }
    }

    fn on_global(&mut self, core: &mut Core, event: Global) {
        match event {
            Global::Query(i) => {
                let alive = |n: NodeId| core.is_alive(n);
                let ready: Vec<bool> = (0..self.servents.len()).map(|i| alive(NodeId(i as u32))).collect();
                let Some((origin, file)) = self.bench.pick_query(core, |n| ready[n.0 as usize]) else {
                    return;
                };
                let criteria = criteria_for(file);
                let ttl = self.bench.scenario.gnutella.ttl;
                let s = self.servent(origin).expect("origin is alive");
                let (id, actions) = s.originate_query(&criteria, 0);
                self.queries.insert(id, i);
                core.record(TraceEvent::QueryIssued { query: i, node: origin, criteria, ttl });
                self.apply(core, origin, actions);
            }
            Global::Fault(i) => {
                let f = self.bench.fault(i).clone();
                let victims = match f.kind {
                    FaultKind::KillRandom => self.bench.random_victims(core, f.fraction),
                    FaultKind::KillNode => f.node.map(NodeId).into_iter().collect(),
                    FaultKind::KillCentral | FaultKind::KillSuper => Vec::new(),
                };
                for v in victims {
                    self.leave(core, v);
                }
            }
            Global::Churn(i) => {
                let e = self.bench.churn(i);
                let join = e.kind == ChurnKind::Join;
                if let Some(n) = self.bench.churn_target(core, join) {
                    if join {
                        self.join(core, n);
                    } else {
                        self.leave(core, n);
                    }
                }
            }
        }
    }

    fn on_leave(&mut self, _core: &mut Core, node: NodeId) {
        if let Some(s) = self.servents[node.0 as usize].take() {
            let peers: Vec<ConnId> = s.neighbors().collect();
            for c in peers {
                if let Some(p) = self.servent(NodeId(c.0)) {
                    p.remove_neighbor(ConnId(node.0));
                }
            }
        }
    }

    fn on_join(&mut self, core: &mut Core, node: NodeId) {
        self.servents[node.0 as usize] = Some(self.make_servent(node));
        let want = self.bench.neighbors(node).len().max(1);
        let mut dialed = 0;
        let known: Vec<NodeId> = self.bench.neighbors(node).to_vec();
        for peer in known {
            if dialed == want {
                break;
            }
            if core.is_alive(peer) && self.connect(core, node, peer) {
                dialed += 1;
            }
        }
        // Fill remaining slots from random live hosts, as a host cache would.
        let mut tries = 0;
        while dialed < want && tries < 4 * want {
            tries += 1;
            let live: Vec<NodeId> = core.alive_nodes().filter(|p| *p != node).collect();
            let Some(&peer) = rand::seq::IndexedRandom::choose(live.as_slice(), &mut core.rng) else {
                break;
            };
            if self.connect(core, node, peer) {
                dialed += 1;
            }
        }
        self.start_timers(core, node);
    }
}
