//! Criterion benchmarks for the fast-path algorithms.
