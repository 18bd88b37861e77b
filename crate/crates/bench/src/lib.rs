//! Criterion benchmarks for the core numerics live under `benches/`.
