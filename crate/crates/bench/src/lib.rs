//! Criterion benchmarks for routing and the full forward/backward pass.
//! Run with `cargo bench -p carp-bench`.
