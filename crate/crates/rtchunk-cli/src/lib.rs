//! Benchmark harness for real-time action chunking: delay sweeps across
//! execution strategies, Wilson intervals, continuity metrics, CSV and
//! SVG reporting.

pub mod continuity;
pub mod csvio;
pub mod plot;
pub mod sweep;
pub mod wilson;
