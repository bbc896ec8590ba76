//! Criterion benchmarks for the hot paths: inference, backpropagation, buffer
//! insertion, and scoring. Run with `cargo bench -p epismart-bench`.
