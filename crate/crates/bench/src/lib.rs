//! Criterion benchmarks for the hot paths of `opsloop`; see `benches/`.
