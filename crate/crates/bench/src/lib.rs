//! Criterion benchmarks for the cyberdyn core; see `benches/`.
