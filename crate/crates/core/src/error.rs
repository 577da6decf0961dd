//! Error types shared across the simulator.

use thiserror::Error;

/// Errors raised while validating models or running a simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("width {width} is not a valid resource width for cluster {cluster}")]
    InvalidWidth { cluster: usize, width: u32 },

    #[error("core {core} is not an aligned leader for width {width} in cluster {cluster}")]
    MisalignedLeader { cluster: usize, core: usize, width: u32 },

    #[error("frequency {freq_hz} Hz is not a configured level of cluster {cluster}")]
    UnknownFrequency { cluster: usize, freq_hz: u64 },

    #[error("invalid kernel {name}: {reason}")]
    InvalidKernel { name: String, reason: String },

    #[error("invalid DAG parameters: {0}")]
    InvalidDag(String),

    #[error("invalid power profile: {0}")]
    InvalidProfile(String),

    #[error("no runtime power for ({task_type}, cluster {cluster}, {freq_hz} Hz, width {width})")]
    MissingPower { task_type: String, cluster: usize, freq_hz: u64, width: u32 },

    #[error("need at least 3 distinct AI values to derive thresholds, got {0}")]
    TooFewAiValues(usize),

    #[error("performance entry (cluster {cluster}, width {width}) of kernel {kernel} is untrained")]
    Untrained { kernel: usize, cluster: usize, width: u32 },

    #[error("observed execution time must be positive, got {0}")]
    NonPositiveObservation(f64),

    #[error("resource occupation undefined: width {width} exceeds {active} active cores")]
    Occupation { width: u32, active: u32 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("policy {policy} cannot run here: {reason}")]
    PolicyUnsupported { policy: &'static str, reason: String },

    #[error("deadlock at t={time:.6}s with {unfinished} unfinished tasks: {snapshot}")]
    Deadlock { time: f64, unfinished: usize, snapshot: String },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
