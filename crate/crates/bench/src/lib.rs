//! Criterion benchmarks for `michscan-core`; see `benches/core.rs`.
