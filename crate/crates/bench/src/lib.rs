//! Criterion benchmarks for the `cuae` kernels; see `benches/`.
