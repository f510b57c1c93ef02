//! Criterion benchmarks for graph construction and the classifier; the
//! benchmarks live in `benches/`. Run them with `cargo bench -p repospd-bench`.
