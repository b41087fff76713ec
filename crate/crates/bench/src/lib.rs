//! Criterion benchmarks for the clearing pipeline live in `benches/`.
