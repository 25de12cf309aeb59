use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::Serialize;

use super::trace::{SimTrace, TraceEvent};
use crate::types::NodeId;
use crate::wire::gnutella::PayloadKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub query: u32,
    pub node: NodeId,
    pub criteria: String,
    pub issued_at: u64,
    /// Distinct peers whose shares were checked.
    pub examined: usize,
    pub hits: u32,
    pub responders: usize,
    pub first_hit_ms: Option<u64>,
}

impl QueryRecord {
    pub fn success(&self) -> bool {
        self.hits > 0
    }
}

pub fn query_records(trace: &SimTrace) -> Vec<QueryRecord> {
    let mut recs: BTreeMap<u32, QueryRecord> = BTreeMap::new();
    let mut examined: BTreeMap<u32, BTreeSet<NodeId>> = BTreeMap::new();
    let mut responders: BTreeMap<u32, BTreeSet<NodeId>> = BTreeMap::new();
    for (t, ev) in trace.events() {
        match ev {
            TraceEvent::QueryIssued { query, node, criteria, .. } => {
                recs.insert(
                    *query,
                    QueryRecord {
                        query: *query,
                        node: *node,
                        criteria: criteria.clone(),
                        issued_at: t,
                        examined: 0,
                        hits: 0,
                        responders: 0,
                        first_hit_ms: None,
                    },
                );
            }
            TraceEvent::Examined { query, node } => {
                examined.entry(*query).or_default().insert(*node);
            }
            TraceEvent::Hit { query, responder, results, .. } => {
                if let Some(r) = recs.get_mut(query) {
                    r.hits += results;
                    r.first_hit_ms.get_or_insert(t - r.issued_at);
                    responders.entry(*query).or_default().insert(*responder);
                }
            }
            _ => {}
        }
    }
    recs.into_values()
        .map(|mut r| {
            r.examined = examined.get(&r.query).map_or(0, BTreeSet::len);
            r.responders = responders.get(&r.query).map_or(0, BTreeSet::len);
            r
        })
        .collect()
}

/// Share of successful queries among those issued in `[from, to)`.
pub fn success_ratio(records: &[QueryRecord], from: u64, to: u64) -> Option<f64> {
    let window: Vec<_> = records
        .iter()
        .filter(|r| r.issued_at >= from && r.issued_at < to)
        .collect();
    if window.is_empty() {
        return None;
    }
    Some(window.iter().filter(|r| r.success()).count() as f64 / window.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub deliveries: u64,
    pub bytes_delivered: u64,
    /// Deliveries by message kind; searches carried inside other protocols
    /// count under the descriptor kind.
    pub by_kind: BTreeMap<String, u64>,
    pub sends: u64,
    pub lost: u64,
    pub queue_drops: u64,
    pub route_drops: u64,
    pub ping_relays: u64,
    pub queries: u64,
    pub successes: u64,
    pub mean_first_hit_ms: Option<f64>,
    pub mean_examined: f64,
    pub transfers: u64,
    pub transfer_bytes: u64,
    pub failovers: u64,
    pub unattached: u64,
    pub leaves: u64,
    pub joins: u64,
}

impl Report {
    pub fn fraction(&self, kind: &str) -> f64 {
        if self.deliveries == 0 {
            return 0.0;
        }
        self.by_kind.get(kind).copied().unwrap_or(0) as f64 / self.deliveries as f64
    }

    pub fn success_ratio(&self) -> Option<f64> {
        (self.queries > 0).then(|| self.successes as f64 / self.queries as f64)
    }

    pub fn ping_pong(&self) -> u64 {
        self.by_kind.get("ping").copied().unwrap_or(0) + self.by_kind.get("pong").copied().unwrap_or(0)
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let rows: Vec<(&str, String)> = vec![
            ("deliveries", self.deliveries.to_string()),
            ("bytes_delivered", self.bytes_delivered.to_string()),
            ("sends", self.sends.to_string()),
            ("lost", self.lost.to_string()),
            ("queue_drops", self.queue_drops.to_string()),
            ("route_drops", self.route_drops.to_string()),
            ("ping_relays", self.ping_relays.to_string()),
            ("ping_pong_deliveries", self.ping_pong().to_string()),
            ("queries", self.queries.to_string()),
            ("successes", self.successes.to_string()),
            ("success_ratio", opt(self.success_ratio())),
            ("mean_first_hit_ms", opt(self.mean_first_hit_ms)),
            ("mean_examined", format!("{:.6}", self.mean_examined)),
            ("transfers", self.transfers.to_string()),
            ("transfer_bytes", self.transfer_bytes.to_string()),
            ("failovers", self.failovers.to_string()),
            ("unattached", self.unattached.to_string()),
            ("leaves", self.leaves.to_string()),
            ("joins", self.joins.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        for (k, n) in &self.by_kind {
            let _ = writeln!(s, "count_{k},{n}");
            let _ = writeln!(s, "fraction_{k},{:.6}", self.fraction(k));
        }
        s
    }
}

pub fn metrics(trace: &SimTrace) -> Report {
    let mut r = Report::default();
    for (_, ev) in trace.events() {
        match ev {
            TraceEvent::Send { info, .. } => {
                r.sends += 1;
                if let Some(d) = info.desc {
                    if d.key.kind == PayloadKind::Ping && d.hops > 0 {
                        r.ping_relays += 1;
                    }
                }
            }
            TraceEvent::Deliver { info, .. } => {
                r.deliveries += 1;
                r.bytes_delivered += info.bytes as u64;
                let kind = info.desc.map_or(info.kind, |d| d.key.kind.name());
                *r.by_kind.entry(kind.to_owned()).or_default() += 1;
            }
            TraceEvent::Lost { .. } => r.lost += 1,
            TraceEvent::QueueDrop { .. } => r.queue_drops += 1,
            TraceEvent::RouteDrop { .. } => r.route_drops += 1,
            TraceEvent::Transfer { bytes, .. } => {
                r.transfers += 1;
                r.transfer_bytes += bytes;
            }
            TraceEvent::Failover { unattached, .. } => {
                r.failovers += 1;
                r.unattached += unattached.len() as u64;
            }
            TraceEvent::NodeLeave { .. } => r.leaves += 1,
            TraceEvent::NodeJoin { .. } => r.joins += 1,
            _ => {}
        }
    }
    let qs = query_records(trace);
    r.queries = qs.len() as u64;
    r.successes = qs.iter().filter(|q| q.success()).count() as u64;
    let firsts: Vec<u64> = qs.iter().filter_map(|q| q.first_hit_ms).collect();
    if !firsts.is_empty() {
        r.mean_first_hit_ms = Some(firsts.iter().sum::<u64>() as f64 / firsts.len() as f64);
    }
    if !qs.is_empty() {
        r.mean_examined = qs.iter().map(|q| q.examined as f64).sum::<f64>() / qs.len() as f64;
    }
    r
}

pub fn queries_csv(records: &[QueryRecord]) -> String {
    let mut s = String::from("query,node,issued_at,examined,hits,responders,first_hit_ms,success\n");
    for q in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            q.query,
            q.node.0,
            q.issued_at,
            q.examined,
            q.hits,
            q.responders,
            q.first_hit_ms.map_or(String::new(), |v| v.to_string()),
            q.success()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::MsgInfo;

    #[test]
    fn pong_fraction_half() {
        let mut t = SimTrace::default();
        for i in 0..60u64 {
            let kind = if i % 2 == 0 { "pong" } else { "query" };
            t.push(
                i,
                TraceEvent::Deliver {
                    msg: i,
                    src: NodeId(0),
                    dst: NodeId(1),
                    info: MsgInfo {
                        protocol: "gnutella",
                        kind,
                        bytes: 1,
                        desc: None,
                    },
                },
            );
        }
        let r = metrics(&t);
        assert_eq!(r.fraction("pong"), 0.5);
        assert!(r.to_csv().contains("fraction_pong,0.500000"));
    }

    #[test]
    fn query_outcomes() {
        let mut t = SimTrace::default();
        t.push(0, TraceEvent::QueryIssued { query: 0, node: NodeId(1), criteria: "a".into(), ttl: 7 });
        t.push(5, TraceEvent::Examined { query: 0, node: NodeId(2) });
        t.push(6, TraceEvent::Examined { query: 0, node: NodeId(2) });
        t.push(20, TraceEvent::Hit { query: 0, node: NodeId(1), responder: NodeId(2), results: 2 });
        t.push(30, TraceEvent::QueryIssued { query: 1, node: NodeId(1), criteria: "b".into(), ttl: 7 });
        let q = query_records(&t);
        assert_eq!(q[0].examined, 1);
        assert_eq!(q[0].first_hit_ms, Some(20));
        assert!(!q[1].success());
        assert_eq!(success_ratio(&q, 0, 10), Some(1.0));
        assert_eq!(success_ratio(&q, 0, 100), Some(0.5));
        assert_eq!(success_ratio(&q, 100, 200), None);
    }
}
