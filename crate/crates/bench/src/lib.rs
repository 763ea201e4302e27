//! Criterion benchmarks for the hmlab kernels live in `benches/`.
