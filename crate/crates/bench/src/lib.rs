//! Criterion benchmarks for the ttfm kernels; see `benches/`.
