use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use peerlab::sim::{run_scenario, success_ratio, Scenario, SimOutput};

use crate::{load_scenario, write_outputs, Failure};

const KINDS: [&str; 5] = ["ping", "pong", "query", "queryhit", "push"];

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub protocol: &'static str,
    pub queries: u64,
    pub completeness: Option<f64>,
    pub reached: f64,
    pub deliveries: u64,
    pub fractions: Vec<f64>,
    pub control: f64,
    pub fault_at: Option<u64>,
    pub before_fault: Option<f64>,
    pub after_fault: Option<f64>,
}

pub fn row(s: &Scenario, out: &SimOutput) -> Row {
    let r = &out.report;
    let fault_at = s.faults.iter().map(|f| f.at_ms).min();
    let fractions: Vec<f64> = KINDS.iter().map(|k| r.fraction(k)).collect();
    Row {
        name: s.name.clone(),
        protocol: s.protocol.name(),
        queries: r.queries,
        completeness: r.success_ratio(),
        reached: r.mean_examined,
        deliveries: r.deliveries,
        control: 1.0 - fractions.iter().sum::<f64>(),
        fractions,
        fault_at,
        before_fault: fault_at.and_then(|t| success_ratio(&out.queries, 0, t)),
        after_fault: fault_at.and_then(|t| success_ratio(&out.queries, t, u64::MAX)),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.4}"))
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::from("name,protocol,queries,completeness,nodes_reached,deliveries");
    for k in KINDS {
        write!(out, ",frac_{k}").unwrap();
    }
    out.push_str(",frac_control,fault_at_ms,success_before_fault,success_after_fault\n");
    for r in rows {
        write!(
            out,
            "{},{},{},{},{:.4},{}",
            r.name,
            r.protocol,
            r.queries,
            opt(r.completeness),
            r.reached,
            r.deliveries
        )
        .unwrap();
        for f in &r.fractions {
            write!(out, ",{f:.4}").unwrap();
        }
        writeln!(
            out,
            ",{:.4},{},{},{}",
            r.control,
            r.fault_at.map_or(String::new(), |t| t.to_string()),
            opt(r.before_fault),
            opt(r.after_fault)
        )
        .unwrap();
    }
    out
}

pub fn to_table(rows: &[Row]) -> String {
    let dash = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.3}"));
    let mut out = format!(
        "{:<18}{:<18}{:>9}{:>13}{:>9}{:>11}{:>9}{:>9}{:>9}\n",
        "name", "protocol", "queries", "completeness", "reached", "messages", "pong", "pre", "post"
    );
    for r in rows {
        writeln!(
            out,
            "{:<18}{:<18}{:>9}{:>13}{:>9.1}{:>11}{:>9.3}{:>9}{:>9}",
            r.name,
            r.protocol,
            r.queries,
            dash(r.completeness),
            r.reached,
            r.deliveries,
            r.fractions[1],
            dash(r.before_fault),
            dash(r.after_fault)
        )
        .unwrap();
    }
    out
}

/// Every scenario must share the first one's workload and seed.
pub fn check_matched(specs: &[(PathBuf, Scenario)]) -> Result<(), Failure> {
    let Some((first_path, first)) = specs.first() else {
        return Err(Failure::Usage("compare needs at least one spec".into()));
    };
    for (path, s) in &specs[1..] {
        if s.seed != first.seed {
            return Err(Failure::Usage(format!(
                "{} has seed {} but {} has {}",
                path.display(),
                s.seed,
                first_path.display(),
                first.seed
            )));
        }
        if s.workload != first.workload {
            return Err(Failure::Usage(format!(
                "{} and {} describe different workloads",
                path.display(),
                first_path.display()
            )));
        }
    }
    Ok(())
}

pub fn compare(paths: &[PathBuf], dir: &Path) -> Result<(), Failure> {
    let specs: Vec<(PathBuf, Scenario)> = paths
        .iter()
        .map(|p| load_scenario(p).map(|s| (p.clone(), s)))
        .collect::<Result<_, _>>()?;
    check_matched(&specs)?;
    let mut names: Vec<&str> = specs.iter().map(|(_, s)| s.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Failure::Usage("scenario names must be distinct".into()));
    }
    // Each simulation is single-threaded; independent runs go in parallel.
    let outputs: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|(_, s)| scope.spawn(move || run_scenario(s)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread")).collect()
    });
    let mut rows = Vec::new();
    let mut violations = 0;
    for ((path, s), out) in specs.iter().zip(outputs) {
        let out = out.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        write_outputs(&dir.join(&s.name), s, &out)?;
        violations += out.violations.len();
        rows.push(row(s, &out));
    }
    let io = |e: std::io::Error| Failure::Usage(format!("{}: {e}", dir.display()));
    fs::write(dir.join("compare.csv"), to_csv(&rows)).map_err(io)?;
    let table = to_table(&rows);
    fs::write(dir.join("compare.txt"), &table).map_err(io)?;
    print!("{table}");
    match violations {
        0 => Ok(()),
        n => Err(Failure::Violations(n)),
    }
}
