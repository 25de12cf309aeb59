//! Acceptance checks, one PASS/FAIL line per criterion. Tolerances are
//! pinned in each check.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use peerlab::gnutella::policy::coverage_estimate;
use peerlab::gnutella::RuleFault;
use peerlab::napster::transfer::{
    client_transfer_firewalled, client_transfer_normal, file_bytes, Phase, Side, TransferRequest, Uploader,
    FIREWALL_GREETING, GET, INVALID_REQUEST, SEND,
};
use peerlab::samples::{gnutella_descriptor, napster_message, openft_packet, NAPSTER_KINDS};
use peerlab::sim::topology::bfs_distances;
use peerlab::sim::{query_records, run_scenario, success_ratio, Rule, Scenario, SimOutput, TraceEvent};
use peerlab::types::{NodeId, SharedFileRecord};
use peerlab::wire::{gnutella, napster, openft};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn suite() -> Vec<(String, Scenario)> {
    let root = scenarios_dir();
    let mut paths: Vec<PathBuf> = Vec::new();
    for dir in [root.clone(), root.join("compare")] {
        for e in std::fs::read_dir(&dir).expect("scenarios directory") {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "toml") {
                paths.push(p);
            }
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let name = p.strip_prefix(&root).unwrap().to_string_lossy().into_owned();
            let s = Scenario::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, s)
        })
        .collect()
}

fn load(rel: &str) -> Scenario {
    let text = std::fs::read_to_string(scenarios_dir().join(rel)).unwrap();
    Scenario::from_toml(&text).unwrap()
}

fn parse(text: &str) -> Scenario {
    Scenario::from_toml(text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

fn run(s: &Scenario) -> Result<SimOutput, String> {
    run_scenario(s).map_err(|e| format!("{}: {e}", s.name))
}

// Encodes `n` generated values one by one, then re-decodes them as
// concatenated batches of 50 to check framing.
fn round_trip<T, E, F>(
    label: &str,
    n: usize,
    mut gen: impl FnMut(usize) -> T,
    encode: impl Fn(&T) -> Result<Vec<u8>, E>,
    decode: impl Fn(&[u8]) -> Result<(T, usize), F>,
    stream: impl Fn(&[u8]) -> Result<Vec<T>, F>,
) -> Result<(), String>
where
    T: PartialEq + std::fmt::Debug,
    E: std::fmt::Display,
    F: std::fmt::Display,
{
    let mut batch = Vec::new();
    let mut buf = Vec::new();
    for i in 0..n {
        let v = gen(i);
        let bytes = encode(&v).map_err(|e| format!("{label} encode {v:?}: {e}"))?;
        let (back, used) = decode(&bytes).map_err(|e| format!("{label} decode {v:?}: {e}"))?;
        ensure(back == v && used == bytes.len(), || format!("{label} mismatch on {v:?}"))?;
        buf.extend_from_slice(&bytes);
        batch.push(v);
        if batch.len() == 50 || i + 1 == n {
            let got = stream(&buf).map_err(|e| format!("{label} stream: {e}"))?;
            ensure(got == batch, || format!("{label} framing broke"))?;
            batch.clear();
            buf.clear();
        }
    }
    Ok(())
}

fn codec_round_trips() -> Outcome {
    const N: usize = 10_000;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    round_trip(
        "gnutella",
        N,
        |i| gnutella_descriptor(&mut rng, gnutella::PayloadKind::ALL[i % 5]),
        gnutella::encode_descriptor,
        gnutella::decode_descriptor,
        gnutella::decode_stream,
    )?;
    round_trip(
        "napster",
        N,
        |i| napster_message(&mut rng, NAPSTER_KINDS[i % NAPSTER_KINDS.len()]),
        napster::encode_message,
        napster::decode_message,
        napster::decode_stream,
    )?;
    let kinds = openft::PacketKind::ALL;
    round_trip(
        "openft",
        N,
        |i| openft_packet(&mut rng, kinds[i % kinds.len()]),
        openft::encode_packet,
        openft::decode_packet,
        openft::decode_stream,
    )?;
    let took = started.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}, limit 10s"))?;
    Ok(format!("3 x {N} instances, framing in batches of 50, {took:.1?} (< 10s)"))
}

fn ttl_ledger() -> Outcome {
    let mut sends = 0usize;
    let mut runs = 0usize;
    for (name, s) in suite() {
        let out = run(&s)?;
        runs += 1;
        let ledger: Vec<_> = out.violations.iter().filter(|v| v.rule == Rule::TtlLedger).collect();
        ensure(ledger.is_empty(), || format!("{name}: {}", ledger[0]))?;
        let born = if s.protocol.name().starts_with("superpeer") {
            s.superpeer.ttl
        } else {
            s.gnutella.ttl
        };
        for (_, ev) in out.trace.events() {
            if let TraceEvent::Send { msg, info, .. } = ev {
                let Some(d) = info.desc else { continue };
                if d.key.kind != gnutella::PayloadKind::Query {
                    continue;
                }
                sends += 1;
                let total = u16::from(d.ttl) + u16::from(d.hops);
                ensure(total == u16::from(born), || {
                    format!("{name}: msg {msg} query ttl {} + hops {} != {born}", d.ttl, d.hops)
                })?;
            }
        }
    }
    Ok(format!(
        "{runs} scenarios, 0 ledger violations, {sends} query sends with ttl+hops == configured ttl"
    ))
}

fn routing_rules() -> Outcome {
    let mut clean = 0;
    for (name, s) in suite() {
        let out = run(&s)?;
        ensure(out.violations.is_empty(), || format!("{name}: {}", out.violations[0]))?;
        clean += 1;
    }
    // Uneven link delays let a flood overtake itself and loop back to its
    // origin, which never happens when the direct link is always fastest.
    let mut base = load("gnutella-basic.toml");
    base.topology.jitter_ms = 30;
    base.t_end_ms = 6_000;
    let mut found = Vec::new();
    for rule in 1..=5u8 {
        let mut s = base.clone();
        s.gnutella.fault = RuleFault::for_rule(rule);
        let out = run(&s)?;
        let n = out.violations.iter().filter(|v| v.rule.number() == Some(rule)).count();
        ensure(n >= 1, || format!("fault for rule {rule} produced no rule {rule} violation"))?;
        found.push(format!("r{rule}={n}"));
    }
    Ok(format!("{clean} clean scenarios; mutations flagged: {}", found.join(" ")))
}

fn coverage_arithmetic() -> Outcome {
    let full = coverage_estimate(4, 7, 1.0).map_err(|e| e.to_string())?.servents;
    let tenth = coverage_estimate(4, 7, 0.1).map_err(|e| e.to_string())?.servents;
    ensure(full == 16_384, || format!("coverage(4,7,1.0) = {full}"))?;
    ensure(tenth == 1_638, || format!("coverage(4,7,0.1) = {tenth}"))?;

    let s = parse(
        r#"
name = "reach"
protocol = "gnutella"
seed = 11
t_end_ms = 2000

[topology]
kind = "decentralized"
nodes = 20000
degree = 4
latency_ms = 10

[gnutella]
ttl = 7
ping_period_ms = 0

[workload]
catalog = 50
files_per_node = 1
queries = 1
query_start_ms = 100
origin = 0
"#,
    );
    let topo = s.topology().map_err(|e| e.to_string())?;
    let within = bfs_distances(&topo.adjacency(), NodeId(0), Some(7))
        .iter()
        .enumerate()
        .filter(|(i, d)| *i != 0 && d.is_some())
        .count();
    let out = run(&s)?;
    let rec = query_records(&out.trace);
    ensure(rec.len() == 1, || format!("{} queries issued", rec.len()))?;
    let reach = rec[0].examined;
    ensure(reach == within, || format!("simulated reach {reach} != bfs {within}"))?;
    ensure(reach as u64 <= full, || format!("reach {reach} > {full}"))?;
    Ok(format!("16384 and 1638 exact; 20000-node reach {reach} == bfs {within} <= 16384"))
}

fn completeness_split() -> Outcome {
    let started = Instant::now();
    let s = parse(
        r#"
name = "napster-200"
protocol = "napster"
seed = 5
t_end_ms = 30000

[topology]
kind = "centralized"
nodes = 200

[workload]
queries = 40
"#,
    );
    let out = run(&s)?;
    let nap = out.report.success_ratio().unwrap_or(0.0);
    ensure(out.report.queries == 40, || format!("napster issued {}", out.report.queries))?;
    ensure(nap == 1.0, || format!("napster success {nap}"))?;

    let ring = load("gnutella-ring.toml");
    ensure(ring.topology.nodes == 200 && ring.gnutella.ttl == 7, || "ring scenario changed".into())?;
    ensure(ring.workload.target_distance == Some(8), || "ring target moved".into())?;
    let out = run(&ring)?;
    let gnu = out.report.success_ratio().unwrap_or(f64::NAN);
    ensure(out.report.queries > 0, || "ring issued no queries".into())?;
    ensure(gnu == 0.0, || format!("gnutella ring success {gnu}"))?;
    let took = started.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}, limit 30s"))?;
    Ok(format!("napster 200 nodes {nap:.2}, gnutella ring at distance 8 with ttl 7 {gnu:.2}, {took:.1?} (< 30s)"))
}

fn superpeer_coverage() -> Outcome {
    let build = |protocol: &str, body: &str| {
        parse(&format!(
            r#"name = "{protocol}"
protocol = "{protocol}"
seed = 21
t_end_ms = 15000
{body}
[workload]
catalog = 2000
files_per_node = 1
queries = 30
origins = "supers"
"#
        ))
    };
    let sp = build(
        "superpeer-ft",
        r#"
[topology]
kind = "centralized-decentralized"
supers = 100
children_per_super = 10
super_degree = 4

[superpeer]
ttl = 7
"#,
    );
    let gn = build(
        "gnutella",
        r#"
[topology]
kind = "decentralized"
nodes = 100
degree = 4

[gnutella]
ttl = 7
ping_period_ms = 0
"#,
    );
    let a = run(&sp)?.report.mean_examined;
    let b = run(&gn)?.report.mean_examined;
    ensure(b > 0.0, || "gnutella examined nobody".into())?;
    let ratio = a / b;
    ensure((9.0..=13.0).contains(&ratio), || format!("ratio {ratio:.2} outside [9, 13]"))?;
    Ok(format!("examined {a:.1} vs {b:.1}, ratio {ratio:.2} in [9, 13]"))
}

fn pong_caching() -> Outcome {
    let off = load("gnutella-basic.toml");
    let mut on = off.clone();
    on.toggles.pong_caching = true;
    let a = run(&off)?.report;
    let b = run(&on)?.report;
    ensure(b.ping_relays == 0, || format!("{} ping relays with caching", b.ping_relays))?;
    ensure(a.ping_relays > 0, || "no ping relays without caching".into())?;
    ensure(b.ping_pong() < a.ping_pong(), || {
        format!("ping+pong {} with caching, {} without", b.ping_pong(), a.ping_pong())
    })?;
    let saved = 1.0 - b.ping_pong() as f64 / a.ping_pong() as f64;
    Ok(format!(
        "relays {} -> 0; ping+pong {} -> {} ({:.0}% less, reported only)",
        a.ping_relays,
        a.ping_pong(),
        b.ping_pong(),
        saved * 100.0
    ))
}

fn priority_dropping() -> Outcome {
    let s = load("gnutella-pressure.toml");
    let out = run(&s)?;
    let mut drops = 0;
    let mut valuable = 0;
    for (t, ev) in out.trace.events() {
        if let TraceEvent::QueueDrop { kind, queued, .. } = ev {
            drops += 1;
            if matches!(*kind, "push" | "queryhit") {
                valuable += 1;
                let cheap = queued.iter().any(|k| matches!(*k, "ping" | "pong"));
                ensure(!cheap, || format!("{kind} dropped at {t}ms with {queued:?} queued"))?;
            }
        }
    }
    ensure(drops > 0, || "no queue pressure".into())?;
    Ok(format!("{drops} queue drops, {valuable} push/queryhit, none while ping/pong queued"))
}

fn fault_at(s: &Scenario) -> u64 {
    s.faults[0].at_ms
}

fn fault_resilience() -> Outcome {
    let s = load("napster-kill-central.toml");
    let t = fault_at(&s);
    let recs = query_records(&run(&s)?.trace);
    let pre = success_ratio(&recs, 0, t).unwrap_or(0.0);
    let post = success_ratio(&recs, t, u64::MAX).ok_or("napster issued nothing after the kill")?;
    ensure(post == 0.0, || format!("napster post-kill success {post}"))?;
    let napster = format!("napster {pre:.2}->{post:.2}");

    let s = load("compare/superpeer.toml");
    let t = fault_at(&s);
    let out = run(&s)?;
    let failovers = out.report.failovers;
    ensure(failovers >= 1, || "no failover recorded".into())?;
    let recs = query_records(&out.trace);
    let pre = success_ratio(&recs, 0, t).ok_or("no superpeer queries before the kill")?;
    let post = success_ratio(&recs, t, u64::MAX).ok_or("no superpeer queries after the kill")?;
    ensure(post >= 0.95 * pre, || format!("superpeer post {post:.3} < 0.95 x pre {pre:.3}"))?;
    let superpeer = format!("superpeer {pre:.2}->{post:.2} ({failovers} failover)");

    let s = load("compare/gnutella.toml");
    let t = fault_at(&s);
    let recs = query_records(&run(&s)?.trace);
    let post = success_ratio(&recs, t, u64::MAX).ok_or("no gnutella queries after the kill")?;
    ensure(post > 0.0, || "gnutella post-kill success 0".into())?;
    let pre = success_ratio(&recs, 0, t).unwrap_or(0.0);
    Ok(format!("{napster}; {superpeer}; gnutella 10% killed {pre:.2}->{post:.2}"))
}

fn transfer_dialogues() -> Outcome {
    let file = SharedFileRecord::synthetic("Some Band - Song.mp3", 5_003);
    let shares = [file.clone()];
    let up = Uploader {
        nick: "alice",
        shares: &shares,
    };
    let req = |offset| TransferRequest {
        nick: "bob".into(),
        filename: file.filename.clone(),
        offset,
    };
    let bytes = |r: &peerlab::napster::transfer::TransferReport| {
        r.packets.iter().map(|p| (p.from, p.bytes.clone())).collect::<Vec<_>>()
    };

    let r = client_transfer_normal(&req(0), up);
    let p = bytes(&r);
    ensure(p.len() == 4, || format!("normal flow has {} packets", p.len()))?;
    ensure(p[0] == (Side::Downloader, GET.to_vec()), || format!("normal first packet {:?}", p[0]))?;
    ensure(
        p[1] == (Side::Downloader, b"bob \"Some Band - Song.mp3\" 0".to_vec()),
        || format!("normal request line {:?}", String::from_utf8_lossy(&p[1].1)),
    )?;
    ensure(p[2] == (Side::Uploader, b"5003".to_vec()), || "normal size line".into())?;
    ensure(r.dialogue.phase == Phase::Done && r.opened_by == Side::Downloader, || "normal phase".into())?;
    ensure(r.received == file_bytes(&file.md5, 5_003, 0), || "normal body".into())?;

    let r = client_transfer_firewalled(&req(0), up);
    let p = bytes(&r);
    ensure(p[0] == (Side::Downloader, FIREWALL_GREETING.to_vec()), || "firewalled greeting".into())?;
    ensure(p[1] == (Side::Uploader, SEND.to_vec()), || "firewalled SEND".into())?;
    ensure(
        p[2] == (Side::Uploader, b"alice \"Some Band - Song.mp3\" 5003".to_vec()),
        || format!("firewalled announce {:?}", String::from_utf8_lossy(&p[2].1)),
    )?;
    ensure(p[3] == (Side::Downloader, b"0".to_vec()), || "firewalled offset".into())?;
    ensure(r.opened_by == Side::Uploader && r.dialogue.phase == Phase::Done, || "firewalled phase".into())?;

    let r = client_transfer_firewalled(&req(6_000), up);
    ensure(r.dialogue.phase == Phase::Failed, || "oversized offset accepted".into())?;
    ensure(
        r.packets.last().map(|p| p.bytes.as_slice()) == Some(INVALID_REQUEST),
        || "no INVALID REQUEST for bad offset".into(),
    )?;
    ensure(r.received.is_empty(), || "bytes after INVALID REQUEST".into())?;

    let r = client_transfer_normal(&req(6_000), up);
    ensure(
        r.packets.last().map(|p| p.bytes.as_slice()) == Some(INVALID_REQUEST),
        || "uploader accepted offset past end".into(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let k = rng.random_range(0..=5_003u64);
        for r in [client_transfer_normal(&req(k), up), client_transfer_firewalled(&req(k), up)] {
            ensure(r.received.len() as u64 == 5_003 - k, || {
                format!("resume at {k} gave {} bytes", r.received.len())
            })?;
            ensure(r.received == file_bytes(&file.md5, 5_003, 0)[k as usize..], || {
                format!("resume at {k} gave the wrong bytes")
            })?;
            let ascii = k.to_string().into_bytes();
            let offset_sent = r.packets.iter().filter(|p| p.from == Side::Downloader).any(|p| {
                p.bytes == ascii || p.bytes.ends_with(&[b" ".as_slice(), &ascii].concat())
            });
            ensure(offset_sent, || format!("offset {k} not sent in ASCII"))?;
        }
    }
    Ok("GET/request/size, 1/SEND/announce/offset, INVALID REQUEST, 200 resumes deliver size-k".into())
}

fn determinism() -> Outcome {
    let mut n = 0;
    for (name, s) in suite() {
        let a = run(&s)?;
        let b = run(&s)?;
        ensure(a.trace.to_jsonl() == b.trace.to_jsonl(), || format!("{name}: traces differ"))?;
        ensure(a.report.to_csv() == b.report.to_csv(), || format!("{name}: reports differ"))?;
        ensure(a.queries_csv() == b.queries_csv(), || format!("{name}: query tables differ"))?;
        n += 1;
    }
    Ok(format!("{n} scenarios run twice, byte-identical trace, report and query table"))
}

fn main() -> ExitCode {
    let checks: [Check; 11] = [
        ("codec round-trips", codec_round_trips),
        ("ttl ledger", ttl_ledger),
        ("routing rules", routing_rules),
        ("coverage arithmetic", coverage_arithmetic),
        ("completeness split", completeness_split),
        ("super-peer coverage", superpeer_coverage),
        ("pong caching", pong_caching),
        ("priority dropping", priority_dropping),
        ("fault resilience", fault_resilience),
        ("transfer dialogues", transfer_dialogues),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
