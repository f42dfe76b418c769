//! Criterion benchmarks for the signal, network and federation paths; see
//! `benches/pipeline.rs`.
