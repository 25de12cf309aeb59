//! Criterion benchmarks for the codecs and the simulator live in `benches/`.
