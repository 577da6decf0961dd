use serde::{Deserialize, Serialize};

use crate::mapper::PredictionRecord;
use crate::perf::TableDump;
use crate::platform::{ClusterId, CoreId, ExecutionPlace};
use crate::workload::{Counters, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    /// Placed to fill an untrained performance-table entry.
    Training,
    /// Minimum predicted energy.
    Energy,
    /// Chosen by a baseline's placement rule.
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreMode {
    /// Executing a task share.
    Running,
    /// Awake and looking for work.
    Stealing,
    /// Mapping released tasks.
    Scheduling,
    /// In back-off sleep.
    Sleeping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub id: TaskId,
    pub kernel: String,
    pub critical: bool,
    pub released_by: CoreId,
    pub released_at: f64,
    pub decision: DecisionKind,
    /// Times the task was deferred before it received a place.
    pub deferrals: u32,
    pub mapped_place: ExecutionPlace,
    pub executed_place: ExecutionPlace,
    pub stolen: bool,
    pub dispatched_at: f64,
    pub leader_start: f64,
    pub leader_finish: f64,
    /// Finish time of the last share.
    pub finished_at: f64,
    /// Core that finished the last share and released the successors.
    pub completed_by: CoreId,
    /// Frequency of the leader's cluster when its share started.
    pub leader_freq_hz: u64,
    pub counters: Counters,
    pub billed_energy_mj: f64,
    /// Predicted energies of every configuration for energy decisions.
    pub alternatives_mj: Vec<f64>,
}

impl TaskOutcome {
    /// Leader-observed execution time.
    pub fn actual_seconds(&self) -> f64 {
        self.leader_finish - self.leader_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreTimes {
    pub task_s: f64,
    pub sleep_s: f64,
    pub steal_s: f64,
    pub scheduling_s: f64,
}

impl CoreTimes {
    pub fn overhead_s(&self) -> f64 {
        self.steal_s + self.scheduling_s
    }

    pub fn total(&self) -> f64 {
        self.task_s + self.sleep_s + self.steal_s + self.scheduling_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceCount {
    pub cluster: ClusterId,
    pub cluster_tag: String,
    pub width: u32,
    pub tasks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepRecord {
    pub core: CoreId,
    pub start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvfsRecord {
    pub time: f64,
    pub cluster: ClusterId,
    pub from_hz: u64,
    pub to_hz: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub time: f64,
    pub cluster: ClusterId,
    pub task: TaskId,
    pub from_hz: u64,
    pub to_hz: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub time: f64,
    pub task: TaskId,
    pub kernel: String,
    pub cluster: ClusterId,
    pub width: u32,
}

/// Piecewise-constant chip power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSegment {
    pub start: f64,
    pub end: f64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub time: f64,
    /// Mean power over the sample window ending at `time`.
    pub power_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivitySegment {
    pub core: CoreId,
    pub start: f64,
    pub end: f64,
    pub mode: CoreMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub core: CoreId,
    pub kind: String,
    pub task: Option<TaskId>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub platform: String,
    pub seed: u64,
    pub tasks: usize,
    pub total_energy_mj: f64,
    pub makespan_s: f64,
    /// Energy not billed to any task: idle power of awake clusters with no
    /// running share, and spin power.
    pub idle_gap_energy_mj: f64,
    pub task_energy_mj: f64,
    pub core_times: Vec<CoreTimes>,
    pub place_counts: Vec<PlaceCount>,
    pub outcomes: Vec<TaskOutcome>,
    pub predictions: Vec<PredictionRecord>,
    pub sleeps: Vec<SleepRecord>,
    pub dvfs_changes: Vec<DvfsRecord>,
    pub detections: Vec<DetectionRecord>,
    pub trainings: Vec<TrainingRecord>,
    pub tables: Vec<TableDump>,
    pub initial_freq_hz: Vec<u64>,
    /// Frequencies the performance model believes at the end of the run.
    pub observed_freq_hz: Vec<u64>,
    pub power_timeline: Vec<PowerSegment>,
    pub power_samples: Vec<PowerSample>,
    pub activity: Vec<ActivitySegment>,
    pub events: Vec<EventRecord>,
}

impl SimReport {
    pub fn total_energy_j(&self) -> f64 {
        self.total_energy_mj / 1000.0
    }

    /// Exact integral of the power timeline.
    pub fn integrate_energy(&self) -> f64 {
        integrate_energy(&self.power_timeline)
    }

    /// Tab-separated event log.
    pub fn event_log_tsv(&self) -> String {
        let mut s = String::from("time\tcore\tkind\ttask\tdetail\n");
        for e in &self.events {
            let task = e.task.map(|t| t.to_string()).unwrap_or_default();
            s.push_str(&format!("{:.9}\t{}\t{}\t{}\t{}\n", e.time, e.core, e.kind, task, e.detail));
        }
        s
    }
}

/// Σ P·Δt over piecewise-constant segments, in mJ.
pub fn integrate_energy(timeline: &[PowerSegment]) -> f64 {
    timeline.iter().map(|s| s.power_mw * (s.end - s.start)).sum()
}

/// Window-averaged samples of a timeline covering [0, end].
pub fn sample_power(timeline: &[PowerSegment], period: f64, end: f64) -> Vec<PowerSample> {
    if !(period > 0.0) || end <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut seg = 0;
    let mut k = 0u64;
    loop {
        let w0 = k as f64 * period;
        if w0 >= end {
            break;
        }
        let w1 = ((k + 1) as f64 * period).min(end);
        let mut energy = 0.0;
        while seg < timeline.len() && timeline[seg].end <= w0 {
            seg += 1;
        }
        let mut i = seg;
        while i < timeline.len() && timeline[i].start < w1 {
            let s = &timeline[i];
            let overlap = s.end.min(w1) - s.start.max(w0);
            if overlap > 0.0 {
                energy += s.power_mw * overlap;
            }
            i += 1;
        }
        out.push(PowerSample { time: w1, power_mw: energy / (w1 - w0) });
        k += 1;
    }
    out
}
