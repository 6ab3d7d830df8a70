//! Criterion benchmarks for `rolldiff`. Run with `cargo bench -p rolldiff-bench`.
