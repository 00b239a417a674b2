//! Criterion benchmarks for the attention, mining, loss and training
//! kernels. Run with `cargo bench -p vgs-bench`; the code lives in `benches/`.
