//! Benchmarks for the shuffle accountant live in `benches/`.
