use std::collections::{HashMap, VecDeque};
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::types::{DescriptorId, ServentId};
use crate::wire::gnutella::{Descriptor, Payload, PayloadKind};

/// Handle for one open connection as seen by a servent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnId(pub u32);

/// Where a remembered descriptor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Local,
    Conn(ConnId),
}

/// Distinguishes replies that legitimately share a descriptor id, such as
/// pongs from different hosts answering one ping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    None,
    Host(Ipv4Addr, u16),
    Servent(ServentId),
    Push(ServentId, u32),
}

/// Key for duplicate suppression and reverse routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RouteKey {
    pub id: DescriptorId,
    pub kind: PayloadKind,
    pub tag: Tag,
}

impl RouteKey {
    pub fn of(d: &Descriptor) -> Self {
        let tag = match &d.payload {
            Payload::Ping | Payload::Query(_) => Tag::None,
            Payload::Pong(p) => Tag::Host(p.ip, p.port),
            Payload::QueryHit(h) => Tag::Servent(h.servent_id),
            Payload::Push(p) => Tag::Push(p.servent_id, p.file_index),
        };
        Self {
            id: d.id(),
            kind: d.kind(),
            tag,
        }
    }

    /// Key of the request whose path this reply must retrace.
    pub fn request(&self) -> Option<RouteKey> {
        let kind = self.kind.request_kind()?;
        let tag = match self.tag {
            Tag::Push(sid, _) => Tag::Servent(sid),
            _ => Tag::None,
        };
        Some(RouteKey {
            id: self.id,
            kind,
            tag,
        })
    }
}

/// Bounded memory of recently seen descriptors, evicting the least
/// recently inserted or consulted entry.
#[derive(Debug)]
pub struct SeenTable {
    capacity: usize,
    map: HashMap<RouteKey, (Origin, u64)>,
    order: VecDeque<(RouteKey, u64)>,
    clock: u64,
}

impl SeenTable {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "seen table needs room for one entry");
        Self {
            capacity,
            map: HashMap::new(),
            order: VecDeque::new(),
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, key: &RouteKey) -> bool {
        self.map.contains_key(key)
    }

    pub fn lookup(&mut self, key: &RouteKey) -> Option<Origin> {
        self.clock += 1;
        let now = self.clock;
        let entry = self.map.get_mut(key)?;
        entry.1 = now;
        let origin = entry.0;
        self.order.push_back((*key, now));
        self.compact();
        Some(origin)
    }

    /// Records `key` unless present; the first origin recorded wins.
    /// Returns whether the key was new.
    pub fn insert(&mut self, key: RouteKey, origin: Origin) -> bool {
        if self.map.contains_key(&key) {
            return false;
        }
        self.clock += 1;
        self.map.insert(key, (origin, self.clock));
        self.order.push_back((key, self.clock));
        while self.map.len() > self.capacity {
            let (k, stamp) = self.order.pop_front().expect("order tracks every entry");
            if self.map.get(&k).is_some_and(|e| e.1 == stamp) {
                self.map.remove(&k);
            }
        }
        self.compact();
        true
    }

    // Drop stale order entries so the queue stays proportional to the map.
    fn compact(&mut self) {
        if self.order.len() > 4 * self.capacity.max(16) {
            let map = &self.map;
            self.order.retain(|(k, s)| map.get(k).is_some_and(|e| e.1 == *s));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(b: u8) -> RouteKey {
        RouteKey {
            id: DescriptorId([b; 16]),
            kind: PayloadKind::Query,
            tag: Tag::None,
        }
    }

    #[test]
    fn first_origin_wins() {
        let mut t = SeenTable::new(8);
        assert!(t.insert(key(1), Origin::Conn(ConnId(3))));
        assert!(!t.insert(key(1), Origin::Conn(ConnId(4))));
        assert_eq!(t.lookup(&key(1)), Some(Origin::Conn(ConnId(3))));
    }

    #[test]
    fn evicts_least_recent() {
        let mut t = SeenTable::new(2);
        t.insert(key(1), Origin::Local);
        t.insert(key(2), Origin::Local);
        t.lookup(&key(1));
        t.insert(key(3), Origin::Local);
        assert!(t.contains(&key(1)));
        assert!(!t.contains(&key(2)));
        assert!(t.contains(&key(3)));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn order_queue_stays_bounded() {
        let mut t = SeenTable::new(4);
        t.insert(key(1), Origin::Local);
        for _ in 0..10_000 {
            t.lookup(&key(1));
        }
        assert!(t.order.len() <= 64);
    }

    #[test]
    fn push_request_key_targets_the_hit() {
        let sid = ServentId([5; 16]);
        let k = RouteKey {
            id: DescriptorId([1; 16]),
            kind: PayloadKind::Push,
            tag: Tag::Push(sid, 9),
        };
        assert_eq!(
            k.request(),
            Some(RouteKey {
                id: DescriptorId([1; 16]),
                kind: PayloadKind::QueryHit,
                tag: Tag::Servent(sid)
            })
        );
    }
}
