//! Experiment driver for the quantization-surrogate laboratory: resolves a
//! config, runs one of the studies from the core crate over its grid, and
//! serializes the result as CSV with a JSON metadata sidecar.
//!
//! Everything here is deterministic per (config, seed): worker pools gather
//! grid points in index order and CSV bodies are byte-stable across reruns.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiments;
pub mod table;
