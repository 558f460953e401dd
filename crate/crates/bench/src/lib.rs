//! Criterion benchmarks for likelihood evaluation and fitting; see
//! `benches/likelihood.rs`.
