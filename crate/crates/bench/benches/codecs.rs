use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use peerlab::samples::{gnutella_descriptor, napster_message, openft_packet, NAPSTER_KINDS};
use peerlab::wire::{gnutella, napster, openft};

const BATCH: usize = 1_000;

fn gnutella_codec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let msgs: Vec<_> = (0..BATCH)
        .map(|i| gnutella_descriptor(&mut rng, gnutella::PayloadKind::ALL[i % 5]))
        .collect();
    let stream: Vec<u8> = msgs.iter().flat_map(|d| gnutella::encode_descriptor(d).unwrap()).collect();
    let mut g = c.benchmark_group("gnutella");
    g.throughput(Throughput::Bytes(stream.len() as u64));
    g.bench_function("encode", |b| {
        b.iter(|| {
            let mut out = Vec::with_capacity(stream.len());
            for d in &msgs {
                gnutella::encode_descriptor_into(black_box(d), &mut out).unwrap();
            }
            out
        })
    });
    g.bench_function("decode_stream", |b| b.iter(|| gnutella::decode_stream(black_box(&stream)).unwrap()));
    g.finish();
}

fn napster_codec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let msgs: Vec<_> = (0..BATCH)
        .map(|i| napster_message(&mut rng, NAPSTER_KINDS[i % NAPSTER_KINDS.len()]))
        .collect();
    let stream: Vec<u8> = msgs.iter().flat_map(|m| napster::encode_message(m).unwrap()).collect();
    let mut g = c.benchmark_group("napster");
    g.throughput(Throughput::Bytes(stream.len() as u64));
    g.bench_function("encode", |b| {
        b.iter(|| msgs.iter().map(|m| napster::encode_message(black_box(m)).unwrap().len()).sum::<usize>())
    });
    g.bench_function("decode_stream", |b| b.iter(|| napster::decode_stream(black_box(&stream)).unwrap()));
    g.finish();
}

fn openft_codec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kinds = openft::PacketKind::ALL;
    let mut g = c.benchmark_group("openft");
    for kind in [openft::PacketKind::NodeInfo, openft::PacketKind::AddShare, openft::PacketKind::Stats] {
        let msgs: Vec<_> = (0..BATCH).map(|_| openft_packet(&mut rng, kind)).collect();
        let stream: Vec<u8> = msgs.iter().flat_map(|p| openft::encode_packet(p).unwrap()).collect();
        g.throughput(Throughput::Bytes(stream.len() as u64));
        g.bench_with_input(BenchmarkId::new("decode_stream", kind.name()), &stream, |b, s| {
            b.iter(|| openft::decode_stream(black_box(s)).unwrap())
        });
    }
    let mixed: Vec<_> = (0..BATCH).map(|i| openft_packet(&mut rng, kinds[i % kinds.len()])).collect();
    g.bench_function("encode/mixed", |b| {
        b.iter(|| mixed.iter().map(|p| openft::encode_packet(black_box(p)).unwrap().len()).sum::<usize>())
    });
    g.finish();
}

criterion_group!(benches, gnutella_codec, napster_codec, openft_codec);
criterion_main!(benches);
