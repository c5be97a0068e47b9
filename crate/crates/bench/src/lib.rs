//! Criterion benchmarks for the hot paths of `hydra-core`; see `benches/`.
