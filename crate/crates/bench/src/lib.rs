//! Criterion benchmarks for the simulation core live under `benches/`.
