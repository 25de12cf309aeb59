use crate::gnutella::{
    answer_query, ConnId, DropReason, Origin, ResponderIdentity, RouteKey, RoutingAction,
    SeenTable, Target, Verb,
};
use crate::types::{DescriptorId, NodeId};
use crate::wire::gnutella::{Descriptor, Payload, PayloadKind, QueryPayload};

use super::registry::SuperNodeState;

/// Link speed super nodes report for their children's hits.
pub const CHILD_SPEED_KBPS: u32 = 56;

pub fn conn(n: NodeId) -> ConnId {
    ConnId(n.0)
}

pub fn node(c: ConnId) -> NodeId {
    NodeId(c.0)
}

/// Query routing for one super node. Queries and hits are ordinary
/// Gnutella descriptors, so the same reverse-path and duplicate rules
/// apply; connection handles are the peer's node ids.
#[derive(Debug)]
pub struct SuperRouter {
    pub state: SuperNodeState,
    seen: SeenTable,
}

impl SuperRouter {
    pub fn new(state: SuperNodeState, seen_capacity: usize) -> Self {
        Self {
            state,
            seen: SeenTable::new(seen_capacity),
        }
    }

    /// Answers `q` for every indexed child but `skip`. The hits are
    /// remembered so copies generated by a child's other parents are
    /// dropped as duplicates instead of relayed.
    fn hits_for(&mut self, q: &Descriptor, skip: Option<NodeId>) -> Vec<Descriptor> {
        let Payload::Query(QueryPayload { min_speed, criteria }) = &q.payload else {
            return Vec::new();
        };
        let hits = self
            .state
            .children()
            .filter(|c| Some(*c) != skip)
            .filter_map(|c| {
                let me = ResponderIdentity {
                    servent_id: c.servent_id(),
                    ip: c.ip(),
                    port: c.port(),
                    speed_kbps: CHILD_SPEED_KBPS,
                };
                let files = self.state.shares_of(c).unwrap_or_default();
                answer_query(criteria, *min_speed, files, &me)
            })
            .map(|hit| Descriptor::new(q.id(), q.header.hops.saturating_add(1), 0, Payload::QueryHit(hit)))
            .collect::<Vec<_>>();
        for h in &hits {
            self.seen.insert(RouteKey::of(h), Origin::Local);
        }
        hits
    }

    fn broadcast(&self, d: &Descriptor, except: Option<NodeId>) -> Vec<RoutingAction> {
        self.state
            .super_peers
            .iter()
            .filter(|s| Some(**s) != except)
            .map(|s| RoutingAction {
                verb: Verb::Forward,
                target: Target::Conn(conn(*s)),
                descriptor: d.clone(),
                drop_reason: None,
            })
            .collect()
    }

    /// Starts a search on behalf of this node's own user.
    pub fn originate_query(&mut self, id: DescriptorId, criteria: &str, ttl: u8) -> Vec<RoutingAction> {
        let d = Descriptor::new(
            id,
            ttl,
            0,
            Payload::Query(QueryPayload {
                min_speed: 0,
                criteria: criteria.to_owned(),
            }),
        );
        self.seen.insert(RouteKey::of(&d), Origin::Local);
        // The local lookup stands in for a hop, so hits carry the same
        // TTL they would from a neighbor at distance one.
        let mut out: Vec<_> = self
            .hits_for(&d, None)
            .into_iter()
            .map(|h| RoutingAction {
                verb: Verb::Deliver,
                target: Target::Local,
                descriptor: h,
                drop_reason: None,
            })
            .collect();
        out.extend(self.broadcast(&d, None));
        out
    }

    /// Routes a query or hit that arrived from child or super node `from`.
    pub fn route_query(&mut self, from: NodeId, d: Descriptor) -> Vec<RoutingAction> {
        let drop = |d, reason| {
            vec![RoutingAction {
                verb: Verb::Drop,
                target: Target::Local,
                descriptor: d,
                drop_reason: Some(reason),
            }]
        };
        let key = RouteKey::of(&d);
        if !self.seen.insert(key, Origin::Conn(conn(from))) {
            return drop(d, DropReason::Duplicate);
        }
        match d.kind() {
            PayloadKind::Query => {
                let mut out: Vec<_> = self
                    .hits_for(&d, Some(from))
                    .into_iter()
                    .map(|h| RoutingAction {
                        verb: Verb::ReplyBack,
                        target: Target::Conn(conn(from)),
                        descriptor: h,
                        drop_reason: None,
                    })
                    .collect();
                let ttl = d.header.ttl.saturating_sub(1);
                if ttl > 0 {
                    let mut next = d.clone();
                    next.header.ttl = ttl;
                    next.header.hops = d.header.hops.saturating_add(1);
                    out.extend(self.broadcast(&next, Some(from)));
                }
                if out.is_empty() {
                    return drop(d, DropReason::TtlExpired);
                }
                out
            }
            PayloadKind::QueryHit => {
                let req = key.request().expect("hits answer queries");
                match self.seen.lookup(&req) {
                    Some(Origin::Local) => vec![RoutingAction {
                        verb: Verb::Deliver,
                        target: Target::Local,
                        descriptor: d,
                        drop_reason: None,
                    }],
                    Some(Origin::Conn(c)) => {
                        let ttl = d.header.ttl.saturating_sub(1);
                        if ttl == 0 {
                            return drop(d, DropReason::TtlExpired);
                        }
                        let mut next = d;
                        next.header.ttl = ttl;
                        next.header.hops = next.header.hops.saturating_add(1);
                        vec![RoutingAction {
                            verb: Verb::ReplyBack,
                            target: Target::Conn(c),
                            descriptor: next,
                            drop_reason: None,
                        }]
                    }
                    None => drop(d, DropReason::NoReverseRoute),
                }
            }
            _ => drop(d, DropReason::UnknownKind),
        }
    }
}
