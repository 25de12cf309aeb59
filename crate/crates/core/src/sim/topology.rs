use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Centralized,
    Ring,
    Hierarchical,
    Decentralized,
    CentralizedRing,
    CentralizedCentralized,
    CentralizedDecentralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    /// Central index server.
    Server,
    /// Plain peer in a flat overlay or leaf of a tree.
    Peer,
    /// Upper-tier node of a hybrid overlay.
    Super,
    /// Lower-tier node attached to an upper-tier node.
    Child,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopoNode {
    pub id: NodeId,
    pub role: NodeRole,
    pub modem: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub nodes: usize,
    pub degree: usize,
    pub branching: usize,
    pub supers: usize,
    pub children_per_super: usize,
    pub super_degree: usize,
    pub latency_ms: u64,
    pub modem_latency_ms: u64,
    pub modem_fraction: f64,
    /// Extra per-edge delay drawn from `0..=jitter_ms`, so that a longer
    /// path can beat a direct link.
    pub jitter_ms: u64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            nodes: 100,
            degree: 4,
            branching: 3,
            supers: 10,
            children_per_super: 10,
            super_degree: 4,
            latency_ms: 10,
            modem_latency_ms: 50,
            modem_fraction: 0.0,
            jitter_ms: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("need at least {0} nodes")]
    TooFew(usize),
    #[error("degree {degree} must be below the node count {nodes}")]
    Degree { degree: usize, nodes: usize },
    #[error("nodes x degree must be even for a regular graph ({nodes} x {degree})")]
    OddStubs { nodes: usize, degree: usize },
    #[error("branching factor must be at least 1")]
    Branching,
    #[error("modem fraction {0} outside [0, 1]")]
    ModemFraction(f64),
    #[error("could not generate a connected graph after {0} attempts")]
    Disconnected(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub nodes: Vec<TopoNode>,
    pub edges: Vec<Edge>,
}

impl Topology {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn adjacency(&self) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a.0 as usize].push(e.b);
            adj[e.b.0 as usize].push(e.a);
        }
        for l in &mut adj {
            l.sort();
        }
        adj
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.edges.iter().filter(|e| e.a == n || e.b == n).count()
    }

    pub fn with_role(&self, role: NodeRole) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(move |n| n.role == role).map(|n| n.id)
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let d = bfs_distances(&self.adjacency(), NodeId(0), None);
        d.iter().all(Option::is_some)
    }
}

/// Hop distances from `from`, optionally cut off after `limit` hops.
pub fn bfs_distances(adj: &[Vec<NodeId>], from: NodeId, limit: Option<u32>) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    dist[from.0 as usize] = Some(0);
    let mut q = VecDeque::from([from]);
    while let Some(n) = q.pop_front() {
        let d = dist[n.0 as usize].expect("queued nodes have a distance");
        if limit.is_some_and(|l| d >= l) {
            continue;
        }
        for m in &adj[n.0 as usize] {
            if dist[m.0 as usize].is_none() {
                dist[m.0 as usize] = Some(d + 1);
                q.push_back(*m);
            }
        }
    }
    dist
}

const ATTEMPTS: usize = 100;

/// Random `degree`-regular simple graph on `n` vertices: pair up stubs at
/// random, then repair self-loops and parallel edges by edge switches.
/// Retries until the graph is connected.
pub fn random_regular<R: Rng>(n: usize, degree: usize, rng: &mut R) -> Result<Vec<(u32, u32)>, TopologyError> {
    if degree >= n {
        return Err(TopologyError::Degree { degree, nodes: n });
    }
    if (n * degree) % 2 == 1 {
        return Err(TopologyError::OddStubs { nodes: n, degree });
    }
    'attempt: for _ in 0..ATTEMPTS {
        let mut stubs: Vec<u32> = (0..n as u32)
            .flat_map(|v| std::iter::repeat_n(v, degree))
            .collect();
        stubs.shuffle(rng);
        let mut edges: Vec<(u32, u32)> = stubs.chunks(2).map(|p| (p[0], p[1])).collect();
        let norm = |a: u32, b: u32| (a.min(b), a.max(b));
        let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for &(a, b) in &edges {
            *counts.entry(norm(a, b)).or_default() += 1;
        }
        let is_bad = |counts: &BTreeMap<(u32, u32), usize>, a: u32, b: u32| a == b || counts[&norm(a, b)] > 1;
        let mut switches = 0;
        while let Some(i) = (0..edges.len()).find(|&i| is_bad(&counts, edges[i].0, edges[i].1)) {
            switches += 1;
            if switches > 100 * edges.len() {
                continue 'attempt;
            }
            let j = rng.random_range(0..edges.len());
            let ((a, b), (c, d)) = (edges[i], edges[j]);
            if i == j {
                continue;
            }
            let (x, y) = if rng.random_bool(0.5) { ((a, c), (b, d)) } else { ((a, d), (b, c)) };
            if x.0 == x.1 || y.0 == y.1 || norm(x.0, x.1) == norm(y.0, y.1) {
                continue;
            }
            if counts.contains_key(&norm(x.0, x.1)) || counts.contains_key(&norm(y.0, y.1)) {
                continue;
            }
            for (p, q) in [(a, b), (c, d)] {
                let k = norm(p, q);
                let e = counts.get_mut(&k).expect("edge is counted");
                *e -= 1;
                if *e == 0 {
                    counts.remove(&k);
                }
            }
            counts.insert(norm(x.0, x.1), 1);
            counts.insert(norm(y.0, y.1), 1);
            edges[i] = x;
            edges[j] = y;
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a as usize].push(NodeId(b));
            adj[b as usize].push(NodeId(a));
        }
        if bfs_distances(&adj, NodeId(0), None).iter().all(Option::is_some) {
            let mut out: Vec<_> = edges.into_iter().map(|(a, b)| norm(a, b)).collect();
            out.sort();
            return Ok(out);
        }
    }
    Err(TopologyError::Disconnected(ATTEMPTS))
}

fn mesh<R: Rng>(n: usize, degree: usize, rng: &mut R) -> Result<Vec<(u32, u32)>, TopologyError> {
    if n <= 1 {
        return Ok(Vec::new());
    }
    if degree + 1 >= n {
        let mut out = Vec::new();
        for a in 0..n as u32 {
            for b in a + 1..n as u32 {
                out.push((a, b));
            }
        }
        return Ok(out);
    }
    random_regular(n, degree, rng)
}

fn ring_edges(n: usize, offset: u32) -> Vec<(u32, u32)> {
    match n {
        0 | 1 => vec![],
        2 => vec![(offset, offset + 1)],
        _ => (0..n as u32)
            .map(|i| (offset + i, offset + (i + 1) % n as u32))
            .collect(),
    }
}

/// Sub-seed for one generator so independent draws do not disturb each
/// other and a super-node mesh equals the flat graph built from the same
/// seed.
pub fn graph_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x746f_706f_6c6f_6779)
}

pub fn build_topology(kind: TopologyKind, p: &TopologyParams, seed: u64) -> Result<Topology, TopologyError> {
    use NodeRole::*;
    if !(0.0..=1.0).contains(&p.modem_fraction) {
        return Err(TopologyError::ModemFraction(p.modem_fraction));
    }
    let mut rng = graph_rng(seed);
    let mut roles: Vec<NodeRole> = Vec::new();
    let mut edges: Vec<(u32, u32)>;
    let need = |n: usize, min: usize| if n < min { Err(TopologyError::TooFew(min)) } else { Ok(()) };
    // Stars hang `per` children off each hub in `hubs`, numbering the
    // children from `roles.len()` on.
    let stars = |roles: &mut Vec<NodeRole>, edges: &mut Vec<(u32, u32)>, hubs: &[u32], per: usize| {
        for &h in hubs {
            for _ in 0..per {
                let c = roles.len() as u32;
                roles.push(Child);
                edges.push((h, c));
            }
        }
    };
    match kind {
        TopologyKind::Centralized => {
            need(p.nodes, 1)?;
            roles.push(Server);
            roles.extend(std::iter::repeat_n(Peer, p.nodes - 1));
            edges = (1..p.nodes as u32).map(|c| (0, c)).collect();
        }
        TopologyKind::Ring => {
            need(p.nodes, 1)?;
            roles = vec![Peer; p.nodes];
            edges = ring_edges(p.nodes, 0);
        }
        TopologyKind::Hierarchical => {
            need(p.nodes, 1)?;
            if p.branching == 0 {
                return Err(TopologyError::Branching);
            }
            roles = vec![Peer; p.nodes];
            roles[0] = Server;
            edges = (1..p.nodes).map(|i| (((i - 1) / p.branching) as u32, i as u32)).collect();
        }
        TopologyKind::Decentralized => {
            need(p.nodes, 2)?;
            roles = vec![Peer; p.nodes];
            edges = random_regular(p.nodes, p.degree, &mut rng)?;
        }
        TopologyKind::CentralizedRing => {
            need(p.supers, 1)?;
            roles = vec![Server; p.supers];
            edges = ring_edges(p.supers, 0);
            let hubs: Vec<u32> = (0..p.supers as u32).collect();
            stars(&mut roles, &mut edges, &hubs, p.children_per_super);
        }
        TopologyKind::CentralizedCentralized => {
            need(p.supers, 1)?;
            roles.push(Server);
            roles.extend(std::iter::repeat_n(Server, p.supers));
            edges = (1..=p.supers as u32).map(|s| (0, s)).collect();
            let hubs: Vec<u32> = (1..=p.supers as u32).collect();
            stars(&mut roles, &mut edges, &hubs, p.children_per_super);
        }
        TopologyKind::CentralizedDecentralized => {
            need(p.supers, 1)?;
            roles = vec![Super; p.supers];
            edges = mesh(p.supers, p.super_degree, &mut rng)?;
            let hubs: Vec<u32> = (0..p.supers as u32).collect();
            stars(&mut roles, &mut edges, &hubs, p.children_per_super);
        }
    }
    let mut modem_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6465_6d73);
    let nodes: Vec<TopoNode> = roles
        .iter()
        .enumerate()
        .map(|(i, r)| TopoNode {
            id: NodeId(i as u32),
            role: *r,
            modem: matches!(r, Peer | Child) && modem_rng.random_bool(p.modem_fraction),
        })
        .collect();
    let lat = |n: u32| {
        if nodes[n as usize].modem {
            p.modem_latency_ms
        } else {
            p.latency_ms
        }
    };
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a69_7474_6572);
    let mut seen = BTreeSet::new();
    let edges = edges
        .into_iter()
        .filter(|&(a, b)| seen.insert((a.min(b), a.max(b))))
        .map(|(a, b)| {
            let jitter = if p.jitter_ms > 0 {
                jitter_rng.random_range(0..=p.jitter_ms)
            } else {
                0
            };
            Edge {
                a: NodeId(a),
                b: NodeId(b),
                latency_ms: lat(a).max(lat(b)) + jitter,
            }
        })
        .collect();
    Ok(Topology { kind, nodes, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TopologyParams {
        TopologyParams::default()
    }

    #[test]
    fn ring_five() {
        let t = build_topology(TopologyKind::Ring, &TopologyParams { nodes: 5, ..params() }, 1).unwrap();
        assert_eq!(t.edges.len(), 5);
        assert!(t.nodes.iter().all(|n| t.degree(n.id) == 2));
        assert!(t.is_connected());
    }

    #[test]
    fn star_ten() {
        let t = build_topology(TopologyKind::Centralized, &TopologyParams { nodes: 10, ..params() }, 1).unwrap();
        assert_eq!(t.edges.len(), 9);
        assert_eq!(t.degree(NodeId(0)), 9);
        assert_eq!(t.with_role(NodeRole::Server).count(), 1);
    }

    #[test]
    fn hybrid_three_by_ten() {
        let p = TopologyParams {
            supers: 3,
            children_per_super: 10,
            ..params()
        };
        let t = build_topology(TopologyKind::CentralizedDecentralized, &p, 1).unwrap();
        let role = |n: NodeId| t.nodes[n.0 as usize].role;
        let child_edges = t
            .edges
            .iter()
            .filter(|e| role(e.a) == NodeRole::Child || role(e.b) == NodeRole::Child)
            .count();
        assert_eq!(child_edges, 30);
        assert_eq!(t.edges.len(), 33);
        for e in &t.edges {
            assert!(!(role(e.a) == NodeRole::Child && role(e.b) == NodeRole::Child));
        }
        assert!(t.is_connected());
    }

    #[test]
    fn regular_graph_is_simple_regular_connected() {
        for seed in 0..5 {
            let t = build_topology(TopologyKind::Decentralized, &TopologyParams { nodes: 300, degree: 4, ..params() }, seed).unwrap();
            assert!(t.nodes.iter().all(|n| t.degree(n.id) == 4));
            assert!(t.is_connected());
            let set: BTreeSet<_> = t.edges.iter().map(|e| (e.a, e.b)).collect();
            assert_eq!(set.len(), t.edges.len());
            assert!(t.edges.iter().all(|e| e.a != e.b));
        }
    }

    #[test]
    fn deterministic_and_matched_meshes() {
        let p = TopologyParams { nodes: 50, degree: 4, supers: 50, super_degree: 4, ..params() };
        let a = build_topology(TopologyKind::Decentralized, &p, 9).unwrap();
        assert_eq!(a, build_topology(TopologyKind::Decentralized, &p, 9).unwrap());
        let h = build_topology(TopologyKind::CentralizedDecentralized, &p, 9).unwrap();
        let supers: Vec<_> = h.edges.iter().filter(|e| e.b.0 < 50).cloned().collect();
        assert_eq!(supers, a.edges);
    }

    #[test]
    fn other_kinds() {
        let t = build_topology(TopologyKind::Hierarchical, &TopologyParams { nodes: 13, branching: 3, ..params() }, 1).unwrap();
        assert_eq!(t.edges.len(), 12);
        assert!(t.is_connected());
        let p = TopologyParams { supers: 4, children_per_super: 2, ..params() };
        let t = build_topology(TopologyKind::CentralizedRing, &p, 1).unwrap();
        assert_eq!(t.edges.len(), 4 + 8);
        let t = build_topology(TopologyKind::CentralizedCentralized, &p, 1).unwrap();
        assert_eq!((t.len(), t.edges.len()), (13, 12));
    }

    #[test]
    fn infeasible() {
        let p = TopologyParams { nodes: 5, degree: 5, ..params() };
        assert!(matches!(build_topology(TopologyKind::Decentralized, &p, 1), Err(TopologyError::Degree { .. })));
        let p = TopologyParams { nodes: 5, degree: 3, ..params() };
        assert!(matches!(build_topology(TopologyKind::Decentralized, &p, 1), Err(TopologyError::OddStubs { .. })));
        let p = TopologyParams { nodes: 0, ..params() };
        assert!(build_topology(TopologyKind::Ring, &p, 1).is_err());
    }

    #[test]
    fn modem_latency() {
        let p = TopologyParams { nodes: 40, modem_fraction: 1.0, ..params() };
        let t = build_topology(TopologyKind::Centralized, &p, 1).unwrap();
        assert!(t.edges.iter().all(|e| e.latency_ms == 50));
    }

    #[test]
    fn jitter_stays_in_range() {
        let p = TopologyParams { nodes: 40, jitter_ms: 7, ..params() };
        let t = build_topology(TopologyKind::Decentralized, &p, 1).unwrap();
        assert!(t.edges.iter().all(|e| (10..=17).contains(&e.latency_ms)));
        assert!(t.edges.iter().any(|e| e.latency_ms != 10));
    }
}
