//! Deterministic discrete-event simulator of energy-aware work-stealing
//! task runtimes on asymmetric multicores.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activity;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod mapper;
pub mod metrics;
pub mod perf;
pub mod platform;
pub mod power;
pub mod workload;

pub use error::{Result, SimError};
