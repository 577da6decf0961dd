//! Task DAGs, the synthetic generators and the ground-truth cost model.

mod cost;
mod dag;
pub mod kernel;

pub use cost::{counters_for, emit_counters, ground_truth_time, Counters, TimeNoise};
pub use dag::{generate_blocked_lu, generate_synthetic_dag, KernelId, TaskDag, TaskId, TaskNode};
pub use kernel::{AiPoint, KernelSpec, Scaling};
