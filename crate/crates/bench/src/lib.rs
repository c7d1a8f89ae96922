//! Criterion benchmarks of the numerical kernels; see `benches/`.
