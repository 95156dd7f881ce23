//! Benchmark-only crate; see the `kernels` bench target.
