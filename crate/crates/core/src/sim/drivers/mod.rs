//! Protocol drivers plugged into the event loop, plus the workload they
//! share: who shares what, when queries are issued and what they look for.

mod gnutella;
mod napster;
mod superpeer;

use std::collections::HashMap;
use std::net::Ipv4Addr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use gnutella::GnutellaDriver;
pub use napster::NapsterDriver;
pub use superpeer::SuperpeerDriver;

use super::churn::{churn_process, ChurnEvent};
use super::engine::{Core, Global};
use super::scenario::{FaultSpec, Origins, Scenario, ScenarioError};
use super::topology::{bfs_distances, NodeRole, Topology};
use crate::types::{NodeId, ServentId, SharedFileRecord};

/// The file every query names when the target is placed at a distance.
const TARGET: usize = 0;

pub fn catalog_file(k: usize) -> SharedFileRecord {
    let size = 1_000_000 + (k as u64 * 7_919) % 4_000_000;
    SharedFileRecord::synthetic(format!("track{k:05}.mp3"), size)
}

pub fn criteria_for(k: usize) -> String {
    format!("track{k:05}")
}

/// Workload state common to every driver.
#[derive(Debug)]
pub struct Workbench {
    pub scenario: Scenario,
    pub topology: Topology,
    adj: Vec<Vec<NodeId>>,
    shares: Vec<Vec<usize>>,
    users: Vec<NodeId>,
    churn: Vec<ChurnEvent>,
    by_sid: HashMap<ServentId, NodeId>,
    by_ip: HashMap<Ipv4Addr, NodeId>,
}

impl Workbench {
    pub fn new(scenario: &Scenario, topology: Topology) -> Result<Self, ScenarioError> {
        let w = &scenario.workload;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x776f_726b_6c6f_6164);
        let users: Vec<NodeId> = topology
            .nodes
            .iter()
            .filter(|n| matches!(n.role, NodeRole::Peer | NodeRole::Child))
            .map(|n| n.id)
            .collect();
        let adj = topology.adjacency();
        let mut shares = vec![Vec::new(); topology.len()];
        match w.target_distance {
            Some(dist) => {
                let origin = NodeId(w.origin.expect("validated"));
                let d = bfs_distances(&adj, origin, None);
                let at: Vec<NodeId> = users
                    .iter()
                    .copied()
                    .filter(|u| d[u.0 as usize] == Some(dist))
                    .collect();
                let Some(&holder) = at.choose(&mut rng) else {
                    return Err(ScenarioError::Invalid(format!(
                        "no peer sits {dist} hops from node {}",
                        origin.0
                    )));
                };
                shares[holder.0 as usize].push(TARGET);
                // Everyone else shares other titles so traffic stays realistic.
                if w.catalog > 1 {
                    for u in &users {
                        if *u != holder && rng.random_bool(scenario.toggles.share_fraction) {
                            for _ in 0..w.files_per_node {
                                shares[u.0 as usize].push(rng.random_range(1..w.catalog));
                            }
                        }
                    }
                }
            }
            None => {
                for u in &users {
                    if rng.random_bool(scenario.toggles.share_fraction) {
                        let mut pick: Vec<usize> = (0..w.catalog).collect();
                        pick.shuffle(&mut rng);
                        pick.truncate(w.files_per_node);
                        pick.sort_unstable();
                        shares[u.0 as usize] = pick;
                    }
                }
            }
        }
        for s in &mut shares {
            s.sort_unstable();
            s.dedup();
        }
        let churn = churn_process(
            w.churn_join_per_s,
            w.churn_leave_per_s,
            w.query_start_ms,
            scenario.t_end_ms,
            scenario.seed,
        );
        let by_sid = topology.nodes.iter().map(|n| (n.id.servent_id(), n.id)).collect();
        let by_ip = topology.nodes.iter().map(|n| (n.id.ip(), n.id)).collect();
        Ok(Self {
            scenario: scenario.clone(),
            topology,
            adj,
            shares,
            users,
            churn,
            by_sid,
            by_ip,
        })
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.adj[n.0 as usize]
    }

    pub fn role(&self, n: NodeId) -> NodeRole {
        self.topology.nodes[n.0 as usize].role
    }

    pub fn is_modem(&self, n: NodeId) -> bool {
        self.topology.nodes[n.0 as usize].modem
    }

    pub fn users(&self) -> &[NodeId] {
        &self.users
    }

    pub fn files_of(&self, n: NodeId) -> Vec<SharedFileRecord> {
        self.shares[n.0 as usize].iter().map(|k| catalog_file(*k)).collect()
    }

    pub fn by_sid(&self, sid: ServentId) -> Option<NodeId> {
        self.by_sid.get(&sid).copied()
    }

    pub fn by_ip(&self, ip: Ipv4Addr) -> Option<NodeId> {
        self.by_ip.get(&ip).copied()
    }

    pub fn fault(&self, i: u32) -> &FaultSpec {
        &self.scenario.faults[i as usize]
    }

    pub fn churn(&self, i: u32) -> ChurnEvent {
        self.churn[i as usize]
    }

    /// Queues every query, fault and churn event of the workload.
    pub fn schedule(&self, core: &mut Core) {
        let w = &self.scenario.workload;
        for i in 0..w.queries {
            core.schedule_global(w.query_start_ms + u64::from(i) * w.query_interval_ms, Global::Query(i));
        }
        for (i, f) in self.scenario.faults.iter().enumerate() {
            core.schedule_global(f.at_ms, Global::Fault(i as u32));
        }
        for (i, e) in self.churn.iter().enumerate() {
            core.schedule_global(e.time_ms, Global::Churn(i as u32));
        }
    }

    /// Picks who asks and what for. `ready` says whether a node can take
    /// part right now, as origin or as the holder of the wanted file.
    pub fn pick_query(&self, core: &mut Core, ready: impl Fn(NodeId) -> bool) -> Option<(NodeId, usize)> {
        let w = &self.scenario.workload;
        let origin = match w.origin {
            Some(o) => Some(NodeId(o)).filter(|n| ready(*n)),
            None => {
                let supers: Vec<NodeId> = self.topology.with_role(NodeRole::Super).collect();
                let pool: Vec<NodeId> = match w.origins {
                    Origins::Supers if !supers.is_empty() => supers.into_iter().filter(|n| ready(*n)).collect(),
                    _ => self.users.iter().copied().filter(|n| ready(*n)).collect(),
                };
                pool.choose(&mut core.rng).copied()
            }
        }?;
        if w.target_distance.is_some() {
            return Some((origin, TARGET));
        }
        let holders: Vec<NodeId> = self
            .users
            .iter()
            .copied()
            .filter(|n| *n != origin && ready(*n) && !self.shares[n.0 as usize].is_empty())
            .collect();
        let holder = *holders.choose(&mut core.rng)?;
        let file = *self.shares[holder.0 as usize].choose(&mut core.rng).expect("holder shares");
        Some((origin, file))
    }

    /// Ordinary peers eligible for churn or random kills.
    pub fn victims(&self, alive: impl Fn(NodeId) -> bool) -> Vec<NodeId> {
        let keep = self.scenario.workload.origin.map(NodeId);
        self.users
            .iter()
            .copied()
            .filter(|n| alive(*n) && Some(*n) != keep)
            .collect()
    }

    /// A random `fraction` of the eligible peers, rounded to nearest.
    pub fn random_victims(&self, core: &mut Core, fraction: f64) -> Vec<NodeId> {
        let pool = self.victims(|n| core.is_alive(n));
        let k = (pool.len() as f64 * fraction).round() as usize;
        pool.choose_multiple(&mut core.rng, k).copied().collect()
    }

    /// The node a churn leave takes down or a churn join brings back.
    pub fn churn_target(&self, core: &mut Core, join: bool) -> Option<NodeId> {
        let pool: Vec<NodeId> = if join {
            self.users.iter().copied().filter(|n| !core.is_alive(*n)).collect()
        } else {
            self.victims(|n| core.is_alive(n))
        };
        pool.choose(&mut core.rng).copied()
    }
}
