//! Criterion benchmarks for steerlab; see `benches/`.
