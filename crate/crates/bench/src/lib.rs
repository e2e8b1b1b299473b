//! Benchmarks for the core pipeline; see `benches/`.
