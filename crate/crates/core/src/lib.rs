//! Instruction-centric CPU performance simulation.
//!
//! A reference out-of-order simulator produces ground-truth per-instruction
//! latencies for synthetic workloads. A convolutional predictor learns those
//! latencies from instruction, history and in-flight context features, and a
//! trace-driven simulator replays traces through the predictor to estimate
//! program cycle counts, sequentially or over parallel sub-traces.

pub mod cli;
mod codec;
pub mod dataset;
pub mod des;
pub mod error;
pub mod history;
pub mod predictor;
pub mod report;
pub mod sim;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};
