//! Benchmark-only crate; see `benches/`.

pub use cycloid_core;
