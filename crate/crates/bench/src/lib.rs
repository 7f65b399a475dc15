//! Criterion benchmarks for specflow; see `benches/throughput.rs`.
//!
//! ```text
//! cargo bench -p specflow-bench
//! ```
