use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeCapability {
    pub bandwidth_kbps: u32,
    pub cpu_score: u32,
    pub memory_score: u32,
    /// Expected fraction of time online, 0 to 1.
    pub expected_availability: f64,
}

impl NodeCapability {
    pub fn modem() -> Self {
        Self {
            bandwidth_kbps: 56,
            cpu_score: 10,
            memory_score: 10,
            expected_availability: 0.2,
        }
    }

    pub fn broadband() -> Self {
        Self {
            bandwidth_kbps: 10_000,
            cpu_score: 100,
            memory_score: 100,
            expected_availability: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// FastTrack ordinary peer, OpenFT user node.
    Ordinary,
    /// FastTrack super node, OpenFT search node.
    SuperNode,
    IndexNode,
    SearchAndIndex,
}

impl Role {
    pub fn searches(self) -> bool {
        matches!(self, Role::SuperNode | Role::SearchAndIndex)
    }

    pub fn indexes(self) -> bool {
        matches!(self, Role::IndexNode | Role::SearchAndIndex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min_bandwidth_kbps: u32,
    pub min_availability: f64,
    /// Index nodes have to stay up; they need at least this availability.
    pub index_availability: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_bandwidth_kbps: 1_000,
            min_availability: 0.5,
            index_availability: 0.9,
        }
    }
}

impl Thresholds {
    pub fn qualifies(&self, cap: &NodeCapability) -> bool {
        cap.bandwidth_kbps >= self.min_bandwidth_kbps
            && cap.expected_availability >= self.min_availability
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RoleError {
    #[error("availability {0} is too low for an index node")]
    Unreliable(f64),
    #[error("node does not meet the search node thresholds")]
    Underpowered,
}

/// OpenFT lets users pick their own role; the choice is checked against
/// the node's capability.
pub fn choose_role(wanted: Role, cap: &NodeCapability, th: &Thresholds) -> Result<Role, RoleError> {
    if wanted.indexes() && cap.expected_availability < th.index_availability {
        return Err(RoleError::Unreliable(cap.expected_availability));
    }
    if wanted.searches() && !th.qualifies(cap) {
        return Err(RoleError::Underpowered);
    }
    Ok(wanted)
}

/// A super node as the bootstrap node knows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownSuper {
    pub id: NodeId,
    pub children: u32,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub role: Role,
    pub contacts: Vec<NodeId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BootstrapError {
    #[error("no super node can take this peer yet; retry later")]
    RetryLater,
}

/// FastTrack-style admission. Qualifying peers become super nodes and get
/// up to `max_contacts` other super nodes; everyone else becomes an
/// ordinary peer with the least-loaded super node that has room.
pub fn bootstrap_assign(
    cap: &NodeCapability,
    th: &Thresholds,
    known_supers: &[KnownSuper],
    max_contacts: usize,
) -> Result<Assignment, BootstrapError> {
    if th.qualifies(cap) {
        let mut supers = known_supers.to_vec();
        supers.sort_by_key(|s| (s.children, s.id));
        return Ok(Assignment {
            role: Role::SuperNode,
            contacts: supers.iter().take(max_contacts).map(|s| s.id).collect(),
        });
    }
    known_supers
        .iter()
        .filter(|s| s.children < s.capacity)
        .min_by_key(|s| (s.children, s.id))
        .map(|s| Assignment {
            role: Role::Ordinary,
            contacts: vec![s.id],
        })
        .ok_or(BootstrapError::RetryLater)
}
