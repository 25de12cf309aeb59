use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::trace::{DescInfo, SimTrace, TraceEvent};
use crate::gnutella::RouteKey;
use crate::types::{DescriptorId, NodeId};
use crate::wire::gnutella::PayloadKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// An originator relayed a descriptor it created.
    Rule1,
    /// A reply left on a connection other than the request's arrival.
    Rule2,
    /// A broadcast went back to the connection it arrived on.
    Rule3,
    /// A descriptor travelled on after its TTL ran out.
    Rule4,
    /// A duplicate was relayed.
    Rule5,
    /// ttl + hops drifted from the value the descriptor was born with.
    TtlLedger,
    /// A delivery without a matching send, or from a sender that left.
    Conservation,
}

impl Rule {
    pub fn number(self) -> Option<u8> {
        match self {
            Rule::Rule1 => Some(1),
            Rule::Rule2 => Some(2),
            Rule::Rule3 => Some(3),
            Rule::Rule4 => Some(4),
            Rule::Rule5 => Some(5),
            _ => None,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(n) => write!(f, "rule {n}"),
            None if *self == Rule::TtlLedger => f.write_str("ttl ledger"),
            None => f.write_str("conservation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub descriptor: Option<DescriptorId>,
    pub src: NodeId,
    pub dst: NodeId,
    pub msg: u64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: msg {} {} -> {}", self.rule, self.msg, self.src, self.dst)?;
        if let Some(id) = self.descriptor {
            write!(f, " descriptor {id}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

struct SendRec {
    src: NodeId,
    dst: NodeId,
    src_life: u32,
    born: Option<u32>,
    delivered: bool,
}

/// Checks a finished trace against the routing rules, the TTL ledger and
/// message conservation. Returns every violation found, in trace order.
pub fn check_invariants(trace: &SimTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut sends: HashMap<u64, SendRec> = HashMap::new();
    let mut delivered: HashMap<u64, (NodeId, DescInfo)> = HashMap::new();
    let mut first: HashMap<(NodeId, RouteKey), (NodeId, u64)> = HashMap::new();
    let mut originated: HashSet<(NodeId, RouteKey)> = HashSet::new();
    let mut life: HashMap<NodeId, u32> = HashMap::new();
    let mut gone: HashSet<NodeId> = HashSet::new();

    for (_, ev) in trace.events() {
        match ev {
            TraceEvent::NodeLeave { node } => {
                gone.insert(*node);
                *life.entry(*node).or_default() += 1;
            }
            TraceEvent::NodeJoin { node } => {
                gone.remove(node);
                *life.entry(*node).or_default() += 1;
            }
            TraceEvent::Send { msg, src, dst, cause, info } => {
                let mut rec = SendRec {
                    src: *src,
                    dst: *dst,
                    src_life: life.get(src).copied().unwrap_or(0),
                    born: None,
                    delivered: false,
                };
                if let Some(d) = info.desc {
                    let mut flag = |rule, detail: String| {
                        out.push(Violation {
                            rule,
                            descriptor: Some(d.key.id),
                            src: *src,
                            dst: *dst,
                            msg: *msg,
                            detail,
                        })
                    };
                    let relayed = cause
                        .and_then(|c| delivered.get(&c).map(|(from, cd)| (c, *from, *cd)))
                        .filter(|(_, _, cd)| cd.key == d.key);
                    let total = u32::from(d.ttl) + u32::from(d.hops);
                    match relayed {
                        Some((c, from, cd)) => {
                            let born = sends.get(&c).and_then(|s| s.born).unwrap_or(total);
                            rec.born = Some(born);
                            if cd.ttl <= 1 {
                                flag(Rule::Rule4, format!("relayed a {} whose ttl reached 0", d.key.kind.name()));
                            }
                            if d.ttl.checked_add(1) != Some(cd.ttl) || d.hops != cd.hops.wrapping_add(1) || total != born {
                                flag(
                                    Rule::TtlLedger,
                                    format!(
                                        "arrived ttl={} hops={}, relayed ttl={} hops={}, born {}",
                                        cd.ttl, cd.hops, d.ttl, d.hops, born
                                    ),
                                );
                            }
                            if d.key.kind.is_broadcast() && *dst == from {
                                flag(Rule::Rule3, "broadcast echoed to its sender".into());
                            }
                            if first.get(&(*src, d.key)).is_some_and(|(_, m)| *m != c) {
                                flag(Rule::Rule5, "relayed a duplicate".into());
                            }
                            if originated.contains(&(*src, d.key)) {
                                flag(Rule::Rule1, "originator relayed its own descriptor".into());
                            }
                        }
                        None => {
                            rec.born = Some(total);
                            originated.insert((*src, d.key));
                        }
                    }
                    if let Some(req) = d.key.request() {
                        match first.get(&(*src, req)) {
                            Some((from, _)) if from == dst => {}
                            Some((from, _)) => flag(
                                Rule::Rule2,
                                format!("{} sent to {dst}, request arrived from {from}", d.key.kind.name()),
                            ),
                            None => flag(Rule::Rule2, format!("{} with no request seen", d.key.kind.name())),
                        }
                    }
                }
                sends.insert(*msg, rec);
            }
            TraceEvent::Deliver { msg, src, dst, info } => {
                let mut flag = |rule, detail: String| {
                    out.push(Violation {
                        rule,
                        descriptor: info.desc.map(|d| d.key.id),
                        src: *src,
                        dst: *dst,
                        msg: *msg,
                        detail,
                    })
                };
                match sends.get_mut(msg) {
                    None => flag(Rule::Conservation, "delivery without a send".into()),
                    Some(s) if s.delivered => flag(Rule::Conservation, "delivered twice".into()),
                    Some(s) if (s.src, s.dst) != (*src, *dst) => flag(Rule::Conservation, "endpoints differ from the send".into()),
                    Some(s) => {
                        s.delivered = true;
                        if gone.contains(src) || life.get(src).copied().unwrap_or(0) != s.src_life {
                            flag(Rule::Conservation, "delivered after the sender left".into());
                        }
                    }
                }
                if let Some(d) = info.desc {
                    if d.ttl == 0 && matches!(d.key.kind, PayloadKind::Ping | PayloadKind::Query) {
                        flag(Rule::Rule4, format!("{} delivered with ttl 0", d.key.kind.name()));
                    }
                    delivered.insert(*msg, (*src, d));
                    first.entry((*dst, d.key)).or_insert((*src, *msg));
                }
            }
            TraceEvent::Lost { msg, .. } => {
                if let Some(s) = sends.get_mut(msg) {
                    s.delivered = true;
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::MsgInfo;
    use crate::wire::gnutella::{Descriptor, Payload, PongPayload};

    fn info(d: &Descriptor) -> MsgInfo {
        MsgInfo {
            protocol: "gnutella",
            kind: d.kind().name(),
            bytes: d.encoded_len(),
            desc: Some(DescInfo::of(d)),
        }
    }

    struct T {
        trace: SimTrace,
    }

    impl T {
        fn send(&mut self, src: u32, dst: u32, cause: Option<u64>, d: &Descriptor) -> u64 {
            let msg = self.trace.records.len() as u64;
            self.trace.push(
                0,
                TraceEvent::Send {
                    msg,
                    src: NodeId(src),
                    dst: NodeId(dst),
                    cause,
                    info: info(d),
                },
            );
            msg
        }

        fn deliver(&mut self, msg: u64, src: u32, dst: u32, d: &Descriptor) {
            self.trace.push(
                0,
                TraceEvent::Deliver {
                    msg,
                    src: NodeId(src),
                    dst: NodeId(dst),
                    info: info(d),
                },
            );
        }

        fn hop(&mut self, src: u32, dst: u32, cause: Option<u64>, d: &Descriptor) -> u64 {
            let m = self.send(src, dst, cause, d);
            self.deliver(m, src, dst, d);
            m
        }
    }

    fn ping(ttl: u8, hops: u8) -> Descriptor {
        Descriptor::new(DescriptorId([1; 16]), ttl, hops, Payload::Ping)
    }

    fn pong(ttl: u8, hops: u8, host: u8) -> Descriptor {
        Descriptor::new(
            DescriptorId([1; 16]),
            ttl,
            hops,
            Payload::Pong(PongPayload {
                port: 1,
                ip: std::net::Ipv4Addr::new(10, 0, 0, host),
                files_shared: 0,
                kilobytes_shared: 0,
            }),
        )
    }

    fn rules(t: &T) -> Vec<Rule> {
        check_invariants(&t.trace).into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn clean_chain() {
        let mut t = T { trace: SimTrace::default() };
        let a = t.hop(0, 1, None, &ping(2, 0));
        let b = t.hop(1, 2, Some(a), &ping(1, 1));
        let c = t.hop(2, 1, Some(b), &pong(2, 0, 3));
        t.hop(1, 0, Some(c), &pong(1, 1, 3));
        assert!(rules(&t).is_empty());
    }

    #[test]
    fn each_rule_is_caught() {
        let mut t = T { trace: SimTrace::default() };
        let a = t.hop(0, 1, None, &ping(2, 0));
        t.hop(1, 0, Some(a), &ping(1, 1));
        assert_eq!(rules(&t), vec![Rule::Rule3]);

        let mut t = T { trace: SimTrace::default() };
        let a = t.hop(0, 1, None, &ping(5, 0));
        let b = t.hop(1, 2, Some(a), &ping(4, 1));
        let c = t.hop(2, 0, Some(b), &ping(3, 2));
        t.hop(0, 3, Some(c), &ping(2, 3));
        assert_eq!(rules(&t), vec![Rule::Rule1]);

        let mut t = T { trace: SimTrace::default() };
        let a = t.hop(0, 1, None, &ping(1, 0));
        t.hop(1, 2, Some(a), &ping(0, 1));
        assert!(rules(&t).contains(&Rule::Rule4));

        let mut t = T { trace: SimTrace::default() };
        t.hop(0, 1, None, &ping(3, 0));
        let dup = t.hop(2, 1, None, &ping(3, 0));
        t.hop(1, 3, Some(dup), &ping(2, 1));
        assert!(rules(&t).contains(&Rule::Rule5));

        let mut t = T { trace: SimTrace::default() };
        let a = t.hop(0, 1, None, &ping(3, 0));
        t.hop(1, 2, Some(a), &pong(2, 0, 1));
        assert_eq!(rules(&t), vec![Rule::Rule2]);

        let mut t = T { trace: SimTrace::default() };
        let a = t.hop(0, 1, None, &ping(3, 0));
        t.hop(1, 2, Some(a), &ping(3, 1));
        assert_eq!(rules(&t), vec![Rule::TtlLedger]);
    }

    #[test]
    fn delivery_after_leave() {
        let mut t = T { trace: SimTrace::default() };
        let m = t.send(0, 1, None, &ping(3, 0));
        t.trace.push(0, TraceEvent::NodeLeave { node: NodeId(0) });
        t.deliver(m, 0, 1, &ping(3, 0));
        assert_eq!(rules(&t), vec![Rule::Conservation]);
    }
}
