use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::drivers::{GnutellaDriver, NapsterDriver, SuperpeerDriver, Workbench};
use super::engine::{Core, LinkConfig};
use super::invariants::{check_invariants, Violation};
use super::metrics::{metrics, query_records, queries_csv, QueryRecord, Report};
use super::scenario::{Protocol, Scenario, ScenarioError};
use super::trace::SimTrace;

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: SimTrace,
    pub report: Report,
    pub queries: Vec<QueryRecord>,
    pub violations: Vec<Violation>,
}

impl SimOutput {
    pub fn queries_csv(&self) -> String {
        queries_csv(&self.queries)
    }

    pub fn summary(&self, s: &Scenario) -> String {
        let r = &self.report;
        let mut out = String::new();
        let ratio = r.success_ratio().map_or("n/a".to_owned(), |v| format!("{v:.3}"));
        writeln!(out, "scenario   {} ({}, seed {})", s.name, s.protocol.name(), s.seed).unwrap();
        writeln!(out, "messages   {} sent, {} delivered, {} lost, {} queue drops", r.sends, r.deliveries, r.lost, r.queue_drops).unwrap();
        for (kind, n) in &r.by_kind {
            writeln!(out, "  {kind:<22}{n:>10}  {:.3}", r.fraction(kind)).unwrap();
        }
        writeln!(out, "queries    {} issued, {} answered, success {ratio}", r.queries, r.successes).unwrap();
        writeln!(out, "reach      {:.2} peers examined per query", r.mean_examined).unwrap();
        if r.transfers > 0 {
            writeln!(out, "transfers  {} ({} bytes)", r.transfers, r.transfer_bytes).unwrap();
        }
        if r.failovers > 0 {
            writeln!(out, "failovers  {} ({} unattached)", r.failovers, r.unattached).unwrap();
        }
        writeln!(out, "violations {}", self.violations.len()).unwrap();
        for v in self.violations.iter().take(20) {
            writeln!(out, "  {v}").unwrap();
        }
        out
    }
}

fn firewalls(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6669_7265_7761_6c6c);
    (0..n).map(|_| fraction > 0.0 && rng.random_bool(fraction)).collect()
}

/// Runs a scenario to completion. The result is a pure function of the
/// scenario, seed included.
pub fn run_scenario(s: &Scenario) -> Result<SimOutput, ScenarioError> {
    s.validate()?;
    let topology = s.topology()?;
    let n = topology.len();
    let link = LinkConfig {
        priority_drop: s.link.priority_drop && s.toggles.priority_drop,
        ..s.link
    };
    let core = Core::new(&topology, link, s.topology.latency_ms, s.topology.modem_latency_ms, s.seed);
    let bench = Workbench::new(s, topology)?;
    let trace = match s.protocol {
        Protocol::Gnutella => {
            let fw = firewalls(n, s.gnutella.firewalled_fraction, s.seed);
            core.run(&mut GnutellaDriver::new(bench, fw), s.t_end_ms)
        }
        Protocol::Napster => {
            let fw = firewalls(n, s.napster.firewalled_fraction, s.seed);
            core.run(&mut NapsterDriver::new(bench, fw), s.t_end_ms)
        }
        Protocol::SuperpeerFt | Protocol::SuperpeerOpenft => {
            core.run(&mut SuperpeerDriver::new(bench), s.t_end_ms)
        }
    };
    let report = metrics(&trace);
    let queries = query_records(&trace);
    let violations = check_invariants(&trace);
    Ok(SimOutput {
        trace,
        report,
        queries,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(protocol: &str, kind: &str, extra: &str) -> Scenario {
        Scenario::from_toml(&format!(
            "name = \"t\"\nprotocol = \"{protocol}\"\nseed = 3\nt_end_ms = 20000\n\n[topology]\nkind = \"{kind}\"\nnodes = 60\nsupers = 6\nchildren_per_super = 5\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn each_protocol_runs_clean() {
        for (p, k) in [
            ("gnutella", "decentralized"),
            ("napster", "centralized"),
            ("superpeer-ft", "centralized-decentralized"),
            ("superpeer-openft", "centralized-decentralized"),
        ] {
            let out = run_scenario(&scenario(p, k, "")).unwrap();
            assert!(out.violations.is_empty(), "{p}: {:?}", &out.violations[..1]);
            assert_eq!(out.report.queries, 20, "{p}");
            assert!(out.report.successes > 0, "{p}");
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let s = scenario("gnutella", "decentralized", "\n[toggles]\nhealth_checks = true\n");
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
        assert_eq!(a.report.to_csv(), b.report.to_csv());
    }

    #[test]
    fn napster_downloads_firewalled_and_not() {
        let s = scenario(
            "napster",
            "centralized",
            "\n[napster]\ndownloads = true\nfirewalled_fraction = 0.5\n",
        );
        let out = run_scenario(&s).unwrap();
        assert!(out.report.transfers > 0);
        let text = String::from_utf8(out.trace.to_jsonl()).unwrap();
        assert!(text.contains("\"opened_by\":\"uploader\""));
        assert!(text.contains("\"opened_by\":\"downloader\""));
    }

    #[test]
    fn gnutella_push_reaches_firewalled_holder() {
        let s = scenario(
            "gnutella",
            "decentralized",
            "\n[gnutella]\nfirewalled_fraction = 0.5\npush_on_hit = true\n",
        );
        let out = run_scenario(&s).unwrap();
        assert!(out.violations.is_empty());
        assert!(out.report.transfers > 0);
    }

    #[test]
    fn openft_index_node_collects_stats() {
        let s = scenario("superpeer-openft", "centralized-decentralized", "\n[superpeer]\nstats_period_ms = 5000\n");
        let out = run_scenario(&s).unwrap();
        let text = String::from_utf8(out.trace.to_jsonl()).unwrap();
        assert!(text.contains("\"event\":\"index_snapshot\""));
    }
}
