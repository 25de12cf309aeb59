use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::LinkConfig;
use super::topology::{build_topology, Topology, TopologyError, TopologyKind, TopologyParams};
use crate::gnutella::RuleFault;
use crate::superpeer::CHILD_CAPACITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Napster,
    Gnutella,
    SuperpeerFt,
    SuperpeerOpenft,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Napster => "napster",
            Protocol::Gnutella => "gnutella",
            Protocol::SuperpeerFt => "superpeer-ft",
            Protocol::SuperpeerOpenft => "superpeer-openft",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    #[serde(default = "d::nodes")]
    pub nodes: usize,
    #[serde(default = "d::degree")]
    pub degree: usize,
    #[serde(default = "d::branching")]
    pub branching: usize,
    #[serde(default = "d::supers")]
    pub supers: usize,
    #[serde(default = "d::children")]
    pub children_per_super: usize,
    #[serde(default = "d::degree")]
    pub super_degree: usize,
    #[serde(default = "d::latency")]
    pub latency_ms: u64,
    #[serde(default = "d::modem_latency")]
    pub modem_latency_ms: u64,
    #[serde(default)]
    pub modem_fraction: f64,
    #[serde(default)]
    pub jitter_ms: u64,
}

impl TopologySpec {
    pub fn params(&self) -> TopologyParams {
        TopologyParams {
            nodes: self.nodes,
            degree: self.degree,
            branching: self.branching,
            supers: self.supers,
            children_per_super: self.children_per_super,
            super_degree: self.super_degree,
            latency_ms: self.latency_ms,
            modem_latency_ms: self.modem_latency_ms,
            modem_fraction: self.modem_fraction,
            jitter_ms: self.jitter_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub pong_caching: bool,
    pub priority_drop: bool,
    /// Fraction of peers that share anything; the rest are free riders.
    pub share_fraction: f64,
    pub health_checks: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            pong_caching: false,
            priority_drop: true,
            share_fraction: 1.0,
            health_checks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnutellaSpec {
    pub ttl: u8,
    pub max_neighbors: usize,
    /// Zero turns periodic pings off.
    pub ping_period_ms: u64,
    pub ping_threshold: usize,
    /// Ping every period regardless of the neighbor count.
    pub ping_always: bool,
    pub ping_ttl: u8,
    pub pong_cache_capacity: usize,
    pub fault: Option<RuleFault>,
    pub firewalled_fraction: f64,
    /// Requesters answer each hit from a firewalled servent with a push.
    pub push_on_hit: bool,
}

impl Default for GnutellaSpec {
    fn default() -> Self {
        Self {
            ttl: 7,
            max_neighbors: 8,
            ping_period_ms: 3_000,
            ping_threshold: 2,
            ping_always: false,
            ping_ttl: 7,
            pong_cache_capacity: 32,
            fault: None,
            firewalled_fraction: 0.0,
            push_on_hit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperpeerSpec {
    pub ttl: u8,
    /// Parents per child; defaults to 1 for FastTrack and 3 for OpenFT.
    pub parents: Option<usize>,
    pub child_capacity: usize,
    pub stats_period_ms: u64,
}

impl Default for SuperpeerSpec {
    fn default() -> Self {
        Self {
            ttl: 7,
            parents: None,
            child_capacity: CHILD_CAPACITY,
            stats_period_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NapsterSpec {
    /// Fraction of clients that log in with data port 0.
    pub firewalled_fraction: f64,
    /// Downloaders fetch the first hit of every search.
    pub downloads: bool,
    pub bandwidth_kbps: u64,
}

impl Default for NapsterSpec {
    fn default() -> Self {
        Self {
            firewalled_fraction: 0.0,
            downloads: false,
            bandwidth_kbps: 1_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origins {
    /// Ordinary users: clients, servents or children.
    Peers,
    /// Upper-tier nodes of a hybrid overlay; ordinary peers elsewhere.
    Supers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    pub catalog: usize,
    pub files_per_node: usize,
    pub queries: u32,
    pub query_start_ms: u64,
    pub query_interval_ms: u64,
    pub origins: Origins,
    /// Issue every query from this node.
    pub origin: Option<u32>,
    /// Place a single target file exactly this many hops from `origin` and
    /// search only for it.
    pub target_distance: Option<u32>,
    pub churn_join_per_s: f64,
    pub churn_leave_per_s: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            catalog: 200,
            files_per_node: 3,
            queries: 20,
            query_start_ms: 2_000,
            query_interval_ms: 500,
            origins: Origins::Peers,
            origin: None,
            target_distance: None,
            churn_join_per_s: 0.0,
            churn_leave_per_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// Every Napster index server leaves.
    KillCentral,
    /// One super node leaves, the busiest unless `node` names one.
    KillSuper,
    /// A random `fraction` of ordinary peers leaves.
    KillRandom,
    KillNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at_ms: u64,
    pub kind: FaultKind,
    #[serde(default = "d::fraction")]
    pub fraction: f64,
    pub node: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub seed: u64,
    #[serde(default = "d::t_end")]
    pub t_end_ms: u64,
    pub topology: TopologySpec,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub gnutella: GnutellaSpec,
    #[serde(default)]
    pub superpeer: SuperpeerSpec,
    #[serde(default)]
    pub napster: NapsterSpec,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

mod d {
    pub fn nodes() -> usize {
        100
    }
    pub fn degree() -> usize {
        4
    }
    pub fn branching() -> usize {
        3
    }
    pub fn supers() -> usize {
        10
    }
    pub fn children() -> usize {
        10
    }
    pub fn latency() -> u64 {
        10
    }
    pub fn modem_latency() -> u64 {
        50
    }
    pub fn fraction() -> f64 {
        0.1
    }
    pub fn t_end() -> u64 {
        30_000
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios serialize")
    }

    pub fn parents(&self) -> usize {
        self.superpeer.parents.unwrap_or(match self.protocol {
            Protocol::SuperpeerOpenft => 3,
            _ => 1,
        })
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let unit = |v: f64, what: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                invalid(format!("{what} {v} outside [0, 1]"))
            }
        };
        unit(self.toggles.share_fraction, "share_fraction")?;
        unit(self.gnutella.firewalled_fraction, "gnutella.firewalled_fraction")?;
        unit(self.napster.firewalled_fraction, "napster.firewalled_fraction")?;
        for f in &self.faults {
            unit(f.fraction, "fault fraction")?;
        }
        if self.gnutella.ttl == 0 || self.superpeer.ttl == 0 {
            return invalid("ttl must be at least 1");
        }
        if self.workload.catalog == 0 {
            return invalid("catalog must hold at least one file");
        }
        if self.workload.churn_join_per_s < 0.0 || self.workload.churn_leave_per_s < 0.0 {
            return invalid("churn rates must be non-negative");
        }
        if self.napster.bandwidth_kbps == 0 {
            return invalid("napster.bandwidth_kbps must be positive");
        }
        if self.workload.target_distance.is_some() && self.workload.origin.is_none() {
            return invalid("target_distance needs a fixed origin");
        }
        let kind = self.topology.kind;
        use TopologyKind::*;
        let fits = match self.protocol {
            Protocol::Napster => matches!(kind, Centralized | CentralizedRing | CentralizedCentralized),
            Protocol::Gnutella => matches!(kind, Ring | Decentralized | Hierarchical),
            Protocol::SuperpeerFt | Protocol::SuperpeerOpenft => kind == CentralizedDecentralized,
        };
        if !fits {
            return invalid(format!(
                "protocol {} cannot run on a {:?} topology",
                self.protocol.name(),
                kind
            ));
        }
        if self.protocol == Protocol::Gnutella && self.gnutella.max_neighbors == 0 {
            return invalid("gnutella.max_neighbors must be positive");
        }
        if self.parents() == 0 {
            return invalid("superpeer.parents must be positive");
        }
        Ok(())
    }

    /// Builds the topology and checks node references against it.
    pub fn topology(&self) -> Result<Topology, ScenarioError> {
        let t = build_topology(self.topology.kind, &self.topology.params(), self.seed)?;
        let n = t.len() as u32;
        if let Some(o) = self.workload.origin {
            if o >= n {
                return invalid(format!("origin {o} is not a node (have {n})"));
            }
        }
        for f in &self.faults {
            if let Some(node) = f.node {
                if node >= n {
                    return invalid(format!("fault node {node} is not a node (have {n})"));
                }
            }
            if f.kind == FaultKind::KillNode && f.node.is_none() {
                return invalid("kill-node needs a node");
            }
        }
        if self.protocol == Protocol::Gnutella {
            let over = t.nodes.iter().find(|x| t.degree(x.id) > self.gnutella.max_neighbors);
            if let Some(x) = over {
                return invalid(format!("node {} has more links than max_neighbors", x.id));
            }
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
name = "basic"
protocol = "gnutella"
seed = 7

[topology]
kind = "decentralized"
nodes = 50
degree = 4
"#;

    #[test]
    fn parses_with_defaults() {
        let s = Scenario::from_toml(BASIC).unwrap();
        assert_eq!(s.gnutella.ttl, 7);
        assert_eq!(s.workload.queries, 20);
        assert!(s.toggles.priority_drop);
        assert_eq!(s.topology().unwrap().len(), 50);
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_unknown_protocol() {
        let bad = BASIC.replace("\"gnutella\"", "\"fasttrack-real\"");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn rejects_missing_seed_and_mismatch() {
        let bad = BASIC.replace("seed = 7\n", "");
        assert!(Scenario::from_toml(&bad).is_err());
        let bad = BASIC.replace("\"decentralized\"", "\"centralized\"");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Invalid(_))));
        let bad = format!("{BASIC}\n[toggles]\nshare_fraction = 2.0\n");
        assert!(Scenario::from_toml(&bad).is_err());
        let bad = format!("{BASIC}\n[workload]\nbogus = 1\n");
        assert!(Scenario::from_toml(&bad).is_err());
    }

    #[test]
    fn fault_parsing() {
        let s = format!("{BASIC}\n[gnutella]\nfault = \"echo-to-sender\"\n\n[[faults]]\nat_ms = 100\nkind = \"kill-random\"\n");
        let s = Scenario::from_toml(&s).unwrap();
        assert_eq!(s.gnutella.fault, Some(RuleFault::EchoToSender));
        assert_eq!(s.faults[0].fraction, 0.1);
    }
}
