use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::topology::Topology;
use super::trace::{DescInfo, LossReason, MsgInfo, SimTrace, TraceEvent};
use crate::gnutella::policy;
use crate::types::{NodeId, SharedFileRecord};
use crate::wire::gnutella::{decode_descriptor, Descriptor};
use crate::wire::napster::{encode_message, NapsterMessage};
use crate::wire::openft::{encode_packet, OpenFtPacket, OpenFtPayload, PacketKind};

/// Control messages of the FastTrack-style overlay. The real protocol is
/// unpublished, so these only carry what the simulation needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FtMessage {
    Join { shares: Vec<SharedFileRecord> },
    Welcome,
    Reassigned { parent: NodeId },
    Search(Descriptor),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimMessage {
    Gnutella(Descriptor),
    Napster(NapsterMessage),
    OpenFt(OpenFtPacket),
    FastTrack(FtMessage),
}

impl SimMessage {
    /// Descriptor carried by this message, if it is a search or reply.
    pub fn descriptor(&self) -> Option<Descriptor> {
        match self {
            SimMessage::Gnutella(d) | SimMessage::FastTrack(FtMessage::Search(d)) => Some(d.clone()),
            SimMessage::OpenFt(OpenFtPacket {
                kind: PacketKind::Search,
                payload: OpenFtPayload::Opaque(bytes),
                ..
            }) => decode_descriptor(bytes).ok().map(|(d, _)| d),
            _ => None,
        }
    }

    pub fn info(&self) -> MsgInfo {
        let desc = self.descriptor();
        let (protocol, kind, bytes) = match self {
            SimMessage::Gnutella(d) => ("gnutella", d.kind().name(), d.encoded_len()),
            SimMessage::Napster(m) => ("napster", m.name(), encode_message(m).map_or(0, |b| b.len())),
            SimMessage::OpenFt(p) => ("openft", p.kind.name(), encode_packet(p).map_or(0, |b| b.len())),
            SimMessage::FastTrack(m) => {
                let (kind, bytes) = match m {
                    FtMessage::Join { shares } => (
                        "join",
                        8 + shares.iter().map(|s| s.filename.len() + 40).sum::<usize>(),
                    ),
                    FtMessage::Welcome => ("welcome", 8),
                    FtMessage::Reassigned { .. } => ("reassigned", 12),
                    FtMessage::Search(d) => (d.kind().name(), d.encoded_len()),
                };
                ("fasttrack", kind, bytes)
            }
        };
        MsgInfo {
            protocol,
            kind,
            bytes,
            desc: desc.as_ref().map(DescInfo::of),
        }
    }

    fn priority(&self) -> u8 {
        self.descriptor().map_or(u8::MAX, |d| policy::priority(d.kind()))
    }
}

/// Per-link transmission model. With a zero service time messages only
/// see propagation latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub service_time_ms: u64,
    /// Messages that may wait behind the one being transmitted.
    pub queue_capacity: Option<usize>,
    /// Shed the lowest-priority message on overflow instead of the newest.
    pub priority_drop: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            service_time_ms: 0,
            queue_capacity: None,
            priority_drop: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timer {
    Ping,
    Health,
    Stats,
    Participation,
    Transfer(u32),
    Custom(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Global {
    Query(u32),
    Fault(u32),
    Churn(u32),
}

#[derive(Debug)]
enum Event {
    Deliver {
        msg: u64,
        src: NodeId,
        src_epoch: u32,
        dst: NodeId,
        m: SimMessage,
    },
    TxDone {
        src: NodeId,
        dst: NodeId,
    },
    Timer {
        node: NodeId,
        epoch: u32,
        timer: Timer,
    },
    Global(Global),
}

struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        (self.time, self.seq) == (o.time, o.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(o.time, o.seq))
    }
}

#[derive(Debug, Default)]
struct Link {
    /// Message on the wire, with its sender's epoch.
    sending: Option<(u64, u32, SimMessage)>,
    waiting: VecDeque<(u64, u32, SimMessage)>,
}

/// Scheduler, network and trace shared by every protocol driver.
pub struct Core {
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<Scheduled>>,
    alive: Vec<bool>,
    epoch: Vec<u32>,
    node_latency: Vec<u64>,
    edge_latency: BTreeMap<(NodeId, NodeId), u64>,
    links: BTreeMap<(NodeId, NodeId), Link>,
    link_cfg: LinkConfig,
    cause: Option<u64>,
    pub trace: SimTrace,
    pub rng: ChaCha8Rng,
}

/// Protocol-specific behavior plugged into the event loop.
pub trait Driver {
    fn start(&mut self, core: &mut Core);
    fn on_message(&mut self, core: &mut Core, src: NodeId, dst: NodeId, msg: SimMessage);
    fn on_timer(&mut self, core: &mut Core, node: NodeId, timer: Timer);
    fn on_global(&mut self, core: &mut Core, event: Global);
    fn on_leave(&mut self, core: &mut Core, node: NodeId);
    fn on_join(&mut self, core: &mut Core, node: NodeId);
}

impl Core {
    pub fn new(topology: &Topology, link_cfg: LinkConfig, latency_ms: u64, modem_latency_ms: u64, seed: u64) -> Self {
        let n = topology.nodes.len();
        let edge_latency = topology
            .edges
            .iter()
            .flat_map(|e| [((e.a, e.b), e.latency_ms), ((e.b, e.a), e.latency_ms)])
            .collect();
        Self {
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            alive: vec![true; n],
            epoch: vec![0; n],
            node_latency: topology
                .nodes
                .iter()
                .map(|t| if t.modem { modem_latency_ms } else { latency_ms })
                .collect(),
            edge_latency,
            links: BTreeMap::new(),
            link_cfg,
            cause: None,
            trace: SimTrace::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn node_count(&self) -> usize {
        self.alive.len()
    }

    pub fn is_alive(&self, n: NodeId) -> bool {
        self.alive.get(n.0 as usize).copied().unwrap_or(false)
    }

    pub fn alive_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| NodeId(i as u32))
    }

    pub fn latency(&self, a: NodeId, b: NodeId) -> u64 {
        self.edge_latency.get(&(a, b)).copied().unwrap_or_else(|| {
            self.node_latency[a.0 as usize].max(self.node_latency[b.0 as usize])
        })
    }

    pub fn record(&mut self, event: TraceEvent) -> u64 {
        self.trace.push(self.now, event)
    }

    fn push(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            time,
            seq: self.seq,
            event,
        }));
    }

    pub fn schedule_timer(&mut self, at: u64, node: NodeId, timer: Timer) {
        let epoch = self.epoch[node.0 as usize];
        self.push(at, Event::Timer { node, epoch, timer });
    }

    pub fn schedule_global(&mut self, at: u64, g: Global) {
        self.push(at, Event::Global(g));
    }

    /// Sends `m` from `src` to `dst`; returns the message's trace id.
    pub fn send(&mut self, src: NodeId, dst: NodeId, m: SimMessage) -> u64 {
        let msg = self.trace.records.len() as u64;
        self.record(TraceEvent::Send {
            msg,
            src,
            dst,
            cause: self.cause,
            info: m.info(),
        });
        let src_epoch = self.epoch[src.0 as usize];
        if self.link_cfg.service_time_ms == 0 {
            let at = self.now + self.latency(src, dst);
            self.push(at, Event::Deliver { msg, src, src_epoch, dst, m });
            return msg;
        }
        let service = self.link_cfg.service_time_ms;
        let cfg = self.link_cfg;
        let now = self.now;
        let link = self.links.entry((src, dst)).or_default();
        if link.sending.is_none() {
            link.sending = Some((msg, src_epoch, m));
            self.push(now + service, Event::TxDone { src, dst });
            return msg;
        }
        link.waiting.push_back((msg, src_epoch, m));
        if cfg.queue_capacity.is_some_and(|c| link.waiting.len() > c) {
            let idx = if cfg.priority_drop {
                (0..link.waiting.len())
                    .min_by_key(|i| (link.waiting[*i].2.priority(), *i))
                    .expect("queue is over capacity")
            } else {
                link.waiting.len() - 1
            };
            let (dropped, _, dm) = link.waiting.remove(idx).expect("index in range");
            let queued = link.waiting.iter().map(|w| w.2.info().kind).collect();
            self.record(TraceEvent::QueueDrop {
                msg: dropped,
                src,
                dst,
                kind: dm.info().kind,
                queued,
            });
        }
        msg
    }

    fn tx_done(&mut self, src: NodeId, dst: NodeId) {
        let service = self.link_cfg.service_time_ms;
        let now = self.now;
        let lat = self.latency(src, dst);
        let link = self.links.get_mut(&(src, dst)).expect("transmitting link exists");
        let (msg, src_epoch, m) = link.sending.take().expect("link was transmitting");
        let next = link.waiting.pop_front();
        let busy = next.is_some();
        link.sending = next;
        self.push(now + lat, Event::Deliver { msg, src, src_epoch, dst, m });
        if busy {
            self.push(now + service, Event::TxDone { src, dst });
        }
    }

    /// Takes `node` offline. Messages queued on its links are lost and
    /// anything still in flight to or from it is lost on arrival.
    pub fn leave(&mut self, node: NodeId) -> bool {
        let i = node.0 as usize;
        if !self.alive[i] {
            return false;
        }
        self.alive[i] = false;
        self.epoch[i] += 1;
        self.record(TraceEvent::NodeLeave { node });
        let keys: Vec<_> = self
            .links
            .keys()
            .filter(|(a, b)| *a == node || *b == node)
            .copied()
            .collect();
        for (src, dst) in keys {
            let link = self.links.get_mut(&(src, dst)).expect("key listed");
            let lost: Vec<u64> = link.waiting.drain(..).map(|w| w.0).collect();
            for msg in lost {
                let reason = if src == node { LossReason::SenderLeft } else { LossReason::ReceiverLeft };
                self.record(TraceEvent::Lost { msg, src, dst, reason });
            }
        }
        true
    }

    pub fn join(&mut self, node: NodeId) -> bool {
        let i = node.0 as usize;
        if self.alive[i] {
            return false;
        }
        self.alive[i] = true;
        self.epoch[i] += 1;
        self.record(TraceEvent::NodeJoin { node });
        true
    }

    /// Runs the event loop until the queue drains or time passes `t_end`.
    pub fn run<D: Driver>(mut self, driver: &mut D, t_end: u64) -> SimTrace {
        driver.start(&mut self);
        while let Some(Reverse(s)) = self.heap.pop() {
            if s.time > t_end {
                break;
            }
            self.now = s.time;
            match s.event {
                Event::Deliver { msg, src, src_epoch, dst, m } => {
                    let reason = if self.epoch[src.0 as usize] != src_epoch || !self.is_alive(src) {
                        Some(LossReason::SenderLeft)
                    } else if !self.is_alive(dst) {
                        Some(LossReason::ReceiverLeft)
                    } else {
                        None
                    };
                    if let Some(reason) = reason {
                        self.record(TraceEvent::Lost { msg, src, dst, reason });
                        continue;
                    }
                    let info = m.info();
                    self.cause = Some(msg);
                    self.record(TraceEvent::Deliver { msg, src, dst, info });
                    driver.on_message(&mut self, src, dst, m);
                    self.cause = None;
                }
                Event::TxDone { src, dst } => self.tx_done(src, dst),
                Event::Timer { node, epoch, timer } => {
                    if self.is_alive(node) && self.epoch[node.0 as usize] == epoch {
                        driver.on_timer(&mut self, node, timer);
                    }
                }
                Event::Global(g) => driver.on_global(&mut self, g),
            }
        }
        self.trace
    }

    /// Notifies the driver of a leave the core just performed.
    pub fn leave_with<D: Driver + ?Sized>(&mut self, driver: &mut D, node: NodeId) {
        if self.leave(node) {
            driver.on_leave(self, node);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::topology::{build_topology, TopologyKind, TopologyParams};
    use crate::types::DescriptorId;
    use crate::wire::gnutella::Payload;

    /// Echoes every ping back as a pong-less ping once.
    struct Echo;
    impl Driver for Echo {
        fn start(&mut self, core: &mut Core) {
            let d = Descriptor::new(DescriptorId([1; 16]), 7, 0, Payload::Ping);
            core.send(NodeId(0), NodeId(1), SimMessage::Gnutella(d));
        }
        fn on_message(&mut self, core: &mut Core, src: NodeId, dst: NodeId, msg: SimMessage) {
            if dst == NodeId(1) {
                core.send(dst, src, msg);
            }
        }
        fn on_timer(&mut self, _: &mut Core, _: NodeId, _: Timer) {}
        fn on_global(&mut self, _: &mut Core, _: Global) {}
        fn on_leave(&mut self, _: &mut Core, _: NodeId) {}
        fn on_join(&mut self, _: &mut Core, _: NodeId) {}
    }

    fn two_nodes() -> Topology {
        build_topology(TopologyKind::Ring, &TopologyParams { nodes: 2, ..Default::default() }, 1).unwrap()
    }

    #[test]
    fn round_trip_takes_two_latencies() {
        let core = Core::new(&two_nodes(), LinkConfig::default(), 10, 50, 1);
        let trace = core.run(&mut Echo, 1_000);
        let delivers: Vec<_> = trace
            .records
            .iter()
            .filter(|r| matches!(r.event, TraceEvent::Deliver { .. }))
            .map(|r| r.time_ms)
            .collect();
        assert_eq!(delivers, vec![10, 20]);
    }

    #[test]
    fn leave_loses_in_flight() {
        struct Leaver;
        impl Driver for Leaver {
            fn start(&mut self, core: &mut Core) {
                let d = Descriptor::new(DescriptorId([1; 16]), 7, 0, Payload::Ping);
                core.send(NodeId(0), NodeId(1), SimMessage::Gnutella(d));
                core.leave(NodeId(0));
            }
            fn on_message(&mut self, _: &mut Core, _: NodeId, _: NodeId, _: SimMessage) {
                panic!("nothing should arrive");
            }
            fn on_timer(&mut self, _: &mut Core, _: NodeId, _: Timer) {}
            fn on_global(&mut self, _: &mut Core, _: Global) {}
            fn on_leave(&mut self, _: &mut Core, _: NodeId) {}
            fn on_join(&mut self, _: &mut Core, _: NodeId) {}
        }
        let trace = Core::new(&two_nodes(), LinkConfig::default(), 10, 50, 1).run(&mut Leaver, 1_000);
        assert!(trace
            .records
            .iter()
            .any(|r| matches!(r.event, TraceEvent::Lost { reason: LossReason::SenderLeft, .. })));
    }

    #[test]
    fn queue_sheds_lowest_priority() {
        struct Burst;
        impl Driver for Burst {
            fn start(&mut self, core: &mut Core) {
                let kinds = [Payload::Ping, Payload::Ping, Payload::Ping];
                for (i, p) in kinds.into_iter().enumerate() {
                    let d = Descriptor::new(DescriptorId([i as u8; 16]), 3, 0, p);
                    core.send(NodeId(0), NodeId(1), SimMessage::Gnutella(d));
                }
                let q = Descriptor::new(
                    DescriptorId([9; 16]),
                    3,
                    0,
                    Payload::Query(crate::wire::gnutella::QueryPayload {
                        min_speed: 0,
                        criteria: "x".into(),
                    }),
                );
                core.send(NodeId(0), NodeId(1), SimMessage::Gnutella(q));
            }
            fn on_message(&mut self, _: &mut Core, _: NodeId, _: NodeId, _: SimMessage) {}
            fn on_timer(&mut self, _: &mut Core, _: NodeId, _: Timer) {}
            fn on_global(&mut self, _: &mut Core, _: Global) {}
            fn on_leave(&mut self, _: &mut Core, _: NodeId) {}
            fn on_join(&mut self, _: &mut Core, _: NodeId) {}
        }
        let cfg = LinkConfig {
            service_time_ms: 5,
            queue_capacity: Some(1),
            priority_drop: true,
        };
        let trace = Core::new(&two_nodes(), cfg, 10, 50, 1).run(&mut Burst, 1_000);
        let drops: Vec<_> = trace
            .records
            .iter()
            .filter_map(|r| match &r.event {
                TraceEvent::QueueDrop { kind, .. } => Some(*kind),
                _ => None,
            })
            .collect();
        assert_eq!(drops, vec!["ping", "ping"]);
        let delivered: Vec<_> = trace
            .records
            .iter()
            .filter_map(|r| match &r.event {
                TraceEvent::Deliver { info, .. } => Some((r.time_ms, info.kind)),
                _ => None,
            })
            .collect();
        assert_eq!(delivered, vec![(15, "ping"), (20, "query")]);
    }
}
