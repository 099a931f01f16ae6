//! Adaptive cache pollution control for LLM-inference access streams.
//!
//! The crate is organised bottom-up:
//!
//! * [`trace`]: synthetic decoding traces, reuse labels and features.
//! * [`predictor`]: the dilated causal convolutional reuse predictor, the
//!   feed-forward baseline, loss, backpropagation, Adam and training.
//! * [`cache`]: a three-level set-associative simulator with a next-line
//!   prefetcher and LRU / Random / SRRIP / learned priority replacement.
//! * [`metrics`]: hit rate, prefetch pollution, miss penalty, latency,
//!   utilisation and throughput figures.
//! * [`harness`]: end-to-end experiment driver, including online learning.

pub mod cache;
pub mod error;
pub mod fsio;
pub mod harness;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
