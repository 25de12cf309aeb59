mod codec;
mod compare;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use peerlab::sim::{run_scenario, Scenario, SimOutput};

/// Exit codes: 0 clean, 1 invariant violation, 2 usage or spec error.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Violations(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(format!("{e:#}"))
    }
}

#[derive(Parser)]
#[command(name = "peerlab", version, about = "Simulate and compare file-sharing overlays, decode their wire formats")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trace and reports.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run scenarios that share a workload and seed, one row per overlay.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        specs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a hex dump to JSON, or encode JSON to hex.
    Codec {
        /// gnutella, napster or openft.
        #[arg(value_name = "PROTOCOL")]
        which: Option<codec::Wire>,
        #[arg(long, conflicts_with = "which")]
        protocol: Option<codec::Wire>,
        #[arg(long, conflicts_with = "encode")]
        decode: Option<String>,
        /// One message as JSON.
        #[arg(long)]
        encode: Option<String>,
    },
}

/// Reads a scenario, applying the SEED override.
pub fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut s = Scenario::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if let Ok(seed) = std::env::var("SEED") {
        s.seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("SEED must be an unsigned integer, got {seed:?}")))?;
    }
    Ok(s)
}

pub fn write_outputs(dir: &Path, s: &Scenario, out: &SimOutput) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Usage(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join("trace.jsonl"), out.trace.to_jsonl()).map_err(io)?;
    fs::write(dir.join("metrics.csv"), out.report.to_csv()).map_err(io)?;
    fs::write(dir.join("queries.csv"), out.queries_csv()).map_err(io)?;
    fs::write(dir.join("summary.txt"), out.summary(s)).map_err(io)?;
    fs::write(dir.join("scenario.toml"), s.to_toml()).map_err(io)?;
    let violations: String = out.violations.iter().map(|v| format!("{v}\n")).collect();
    fs::write(dir.join("violations.txt"), violations).map_err(io)?;
    Ok(())
}

fn simulate(spec: &Path, dir: &Path) -> Result<(), Failure> {
    let s = load_scenario(spec)?;
    let out = run_scenario(&s).map_err(|e| Failure::Usage(format!("{}: {e}", spec.display())))?;
    write_outputs(dir, &s, &out)?;
    print!("{}", out.summary(&s));
    match out.violations.len() {
        0 => Ok(()),
        n => Err(Failure::Violations(n)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate { spec, out } => simulate(&spec, &out),
        Cmd::Compare { specs, out } => compare::compare(&specs, &out),
        Cmd::Codec {
            which,
            protocol,
            decode,
            encode,
        } => codec::run(which.or(protocol), decode, encode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violations(n)) => {
            eprintln!("error: {n} routing invariant violation(s)");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
