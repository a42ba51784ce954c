//! Criterion benchmarks for planning, profiling, prediction and search. Run with `cargo bench -p mbplan-bench`.
