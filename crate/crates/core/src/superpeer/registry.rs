use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::types::{name_matches, NodeId, SharedFileRecord};

/// Children one search node indexes.
pub const CHILD_CAPACITY: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegistryOp {
    Add,
    Rem,
    Mod,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("{0} is not a child of this node")]
    UnknownChild(NodeId),
    #[error("child capacity {0} reached")]
    Full(usize),
}

/// Index a super node keeps about its own group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuperNodeState {
    pub id: NodeId,
    pub capacity: usize,
    children: BTreeMap<NodeId, Vec<SharedFileRecord>>,
    pub super_peers: BTreeSet<NodeId>,
    pub participation: BTreeMap<NodeId, u16>,
}

impl SuperNodeState {
    pub fn new(id: NodeId) -> Self {
        Self::with_capacity(id, CHILD_CAPACITY)
    }

    pub fn with_capacity(id: NodeId, capacity: usize) -> Self {
        Self {
            id,
            capacity,
            children: BTreeMap::new(),
            super_peers: BTreeSet::new(),
            participation: BTreeMap::new(),
        }
    }

    pub fn child_count(&self) -> usize {
        self.children.len()
    }

    pub fn spare(&self) -> usize {
        self.capacity.saturating_sub(self.children.len())
    }

    pub fn is_full(&self) -> bool {
        self.spare() == 0
    }

    pub fn has_child(&self, child: NodeId) -> bool {
        self.children.contains_key(&child)
    }

    pub fn children(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.keys().copied()
    }

    pub fn shares_of(&self, child: NodeId) -> Option<&[SharedFileRecord]> {
        self.children.get(&child).map(Vec::as_slice)
    }

    /// Accepts a child and its full share list. Re-registering a child
    /// replaces its list.
    pub fn register_child(&mut self, child: NodeId, shares: Vec<SharedFileRecord>) -> Result<(), RegistryError> {
        if !self.children.contains_key(&child) && self.is_full() {
            return Err(RegistryError::Full(self.capacity));
        }
        self.children.insert(child, shares);
        self.participation.entry(child).or_insert(0);
        Ok(())
    }

    pub fn remove_child(&mut self, child: NodeId) -> Option<Vec<SharedFileRecord>> {
        self.participation.remove(&child);
        self.children.remove(&child)
    }

    /// Children whose shares match `criteria`, with the matching files.
    pub fn search<'a>(&'a self, criteria: &'a str) -> impl Iterator<Item = (NodeId, Vec<&'a SharedFileRecord>)> + 'a {
        self.children.iter().filter_map(move |(c, files)| {
            let hits: Vec<_> = files
                .iter()
                .filter(|f| name_matches(criteria, &f.filename))
                .collect();
            (!hits.is_empty()).then_some((*c, hits))
        })
    }
}

/// Applies an add, remove or modify share update from `child`. Records are
/// identified by filename and digest; removing an absent record is a no-op.
pub fn registry_update(
    state: &mut SuperNodeState,
    child: NodeId,
    op: RegistryOp,
    records: &[SharedFileRecord],
) -> Result<(), RegistryError> {
    let list = state
        .children
        .get_mut(&child)
        .ok_or(RegistryError::UnknownChild(child))?;
    let same = |a: &SharedFileRecord, b: &SharedFileRecord| a.filename == b.filename && a.md5 == b.md5;
    for r in records {
        match op {
            RegistryOp::Add => list.push(r.clone()),
            RegistryOp::Rem => list.retain(|x| !same(x, r)),
            RegistryOp::Mod => {
                if let Some(x) = list.iter_mut().find(|x| same(x, r)) {
                    *x = r.clone();
                }
            }
        }
    }
    Ok(())
}

/// Registers `child` with up to `k` of `candidates`, least loaded first.
/// Full candidates refuse and the search moves on. Returns the parents
/// that accepted.
pub fn select_parents(
    candidates: &mut [&mut SuperNodeState],
    child: NodeId,
    shares: &[SharedFileRecord],
    k: usize,
) -> Vec<NodeId> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|i| (candidates[*i].child_count(), candidates[*i].id));
    let mut chosen = Vec::new();
    for i in order {
        if chosen.len() == k {
            break;
        }
        let c = &mut candidates[i];
        if chosen.contains(&c.id) {
            continue;
        }
        if c.register_child(child, shares.to_vec()).is_ok() {
            chosen.push(c.id);
        }
    }
    chosen
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct FailoverOutcome {
    pub assignments: Vec<(NodeId, NodeId)>,
    pub unattached: Vec<NodeId>,
}

/// Moves the orphans of a failed super node onto live super nodes, filling
/// the one with the most room first. Orphans that fit nowhere are reported
/// unattached.
pub fn failover_reassign(
    live: &mut [&mut SuperNodeState],
    orphans: Vec<(NodeId, Vec<SharedFileRecord>)>,
) -> FailoverOutcome {
    let mut order: Vec<usize> = (0..live.len()).collect();
    order.sort_by_key(|i| (std::cmp::Reverse(live[*i].spare()), live[*i].id));
    let mut out = FailoverOutcome::default();
    let mut slot = order.into_iter().peekable();
    for (child, shares) in orphans {
        while slot.peek().is_some_and(|i| live[*i].is_full()) {
            slot.next();
        }
        match slot.peek() {
            Some(&i) => {
                live[i]
                    .register_child(child, shares)
                    .expect("slot has room");
                out.assignments.push((child, live[i].id));
            }
            None => out.unattached.push(child),
        }
    }
    out
}

/// Peers examined when a query visits one super node: the node itself and
/// each child it indexes.
pub fn coverage_ratio(children_per_super: u64) -> u64 {
    children_per_super + 1
}
