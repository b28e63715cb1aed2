//! Criterion benchmarks for gsedit; see `benches/`.
