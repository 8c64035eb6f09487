//! Criterion benchmarks for the detection pipeline live in `benches/`.
