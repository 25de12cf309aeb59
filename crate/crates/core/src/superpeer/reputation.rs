use std::cmp::Reverse;
use std::collections::BTreeMap;

pub const MAX_LEVEL: u16 = 1_000;
/// Connected seconds per participation level.
pub const SECONDS_PER_LEVEL: u64 = 60;

/// Raises a participation level for `connected_seconds` more uptime: one
/// level per started minute, capped at 1000.
pub fn participation_update(level: u16, connected_seconds: u64) -> u16 {
    let gain = connected_seconds.div_ceil(SECONDS_PER_LEVEL);
    (u64::from(level.min(MAX_LEVEL)) + gain).min(u64::from(MAX_LEVEL)) as u16
}

/// Serves higher participation levels first, first-come within a level.
#[derive(Debug, Clone)]
pub struct ParticipationQueue<T> {
    items: BTreeMap<(Reverse<u16>, u64), T>,
    seq: u64,
}

impl<T> Default for ParticipationQueue<T> {
    fn default() -> Self {
        Self {
            items: BTreeMap::new(),
            seq: 0,
        }
    }
}

impl<T> ParticipationQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, level: u16, item: T) {
        self.items.insert((Reverse(level), self.seq), item);
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(u16, T)> {
        self.items.pop_first().map(|((Reverse(l), _), t)| (l, t))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_cases() {
        assert_eq!(participation_update(1_000, 600), 1_000);
        assert!(participation_update(0, 1) > 0);
        assert_eq!(participation_update(0, 600), 10);
        assert_eq!(participation_update(5, 0), 5);
    }

    #[test]
    fn queue_order() {
        let mut q = ParticipationQueue::new();
        q.push(10, "low");
        q.push(900, "high");
        q.push(10, "low2");
        assert_eq!(q.pop(), Some((900, "high")));
        assert_eq!(q.pop(), Some((10, "low")));
        assert_eq!(q.pop(), Some((10, "low2")));
        assert!(q.is_empty());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(level in 0u16..=1000, a in 0u64..100_000, b in 0u64..100_000) {
            let once = participation_update(level, a);
            prop_assert!(once >= level && once <= MAX_LEVEL);
            prop_assert!(participation_update(once, b) >= once);
        }
    }
}
