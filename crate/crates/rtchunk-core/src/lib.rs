//! Action-chunk flow policies under inference latency.
//!
//! The crate trains flow-matching policies that emit chunks of `H` future
//! actions, optionally conditioned on the action prefix that will execute
//! while inference is in flight, and simulates asynchronous execution
//! against a small dynamic 2D environment. Four execution strategies are
//! provided: a synchronous baseline that pauses during inference, a naive
//! asynchronous baseline, inpainting-guided sampling, and prefix-conditioned
//! sampling (real-time chunking learned at training time).

pub mod envkit;
pub mod error;
pub mod executor;
pub mod flowpolicy;
pub mod guidance;
pub mod ndcore;
pub mod trainer;

pub use error::{Error, Result};
