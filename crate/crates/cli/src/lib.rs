//! Study orchestration for the `henry-mlmc` engine.
//!
//! A study is a directory holding its configuration, a persistent sample
//! cache and the CSV and SVG reports derived from it. Solves run on a fixed
//! worker pool; the calling thread owns the cache and all accumulators, so
//! every report is independent of scheduling.

pub mod cache;
pub mod config;
pub mod pool;
pub mod report;
pub mod study;
pub mod svg;
