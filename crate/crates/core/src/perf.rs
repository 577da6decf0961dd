//! Online per-kernel performance tables: training, prediction, weighted
//! update and frequency-change detection.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::platform::{ClusterId, ExecutionPlace, FrequencyState, PlaceConfig, PlatformTopology};
use crate::power::TaskType;
use crate::workload::{KernelId, TaskId};

/// Execution-time estimates of one kernel over (cluster × width slot).
/// A zero entry is untrained.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceTable {
    kernel: KernelId,
    slots: usize,
    entries: Vec<f64>,
    valid: Vec<bool>,
    /// Training task currently in flight for the entry.
    pending: Vec<Option<TaskId>>,
}

impl PerformanceTable {
    pub fn new(kernel: KernelId, topology: &PlatformTopology) -> Self {
        let slots = topology.max_width_slots();
        let n = topology.cluster_count() * slots;
        let mut valid = vec![false; n];
        for (c, spec) in topology.clusters().iter().enumerate() {
            for i in 0..spec.widths().len() {
                valid[c * slots + i] = true;
            }
        }
        Self { kernel, slots, entries: vec![0.0; n], valid, pending: vec![None; n] }
    }

    pub fn kernel(&self) -> KernelId {
        self.kernel
    }

    pub fn rows(&self) -> usize {
        self.entries.len() / self.slots
    }

    pub fn columns(&self) -> usize {
        self.slots
    }

    fn index(&self, cluster: ClusterId, width: u32) -> Result<usize> {
        let slot = width.trailing_zeros() as usize;
        let i = cluster * self.slots + slot;
        if !width.is_power_of_two() || slot >= self.slots || i >= self.entries.len() || !self.valid[i] {
            return Err(SimError::InvalidWidth { cluster, width });
        }
        Ok(i)
    }

    pub fn entry(&self, cluster: ClusterId, width: u32) -> Result<f64> {
        Ok(self.entries[self.index(cluster, width)?])
    }

    pub fn is_fully_trained(&self) -> bool {
        self.entries.iter().zip(&self.valid).all(|(e, v)| !v || *e > 0.0)
    }

    pub fn predict(&self, cluster: ClusterId, width: u32) -> Result<f64> {
        let e = self.entry(cluster, width)?;
        if e == 0.0 {
            return Err(SimError::Untrained { kernel: self.kernel, cluster, width });
        }
        Ok(e)
    }

    pub fn update(&mut self, cluster: ClusterId, width: u32, observed: f64, ema_weight: f64) -> Result<()> {
        if !(observed > 0.0 && observed.is_finite()) {
            return Err(SimError::NonPositiveObservation(observed));
        }
        let i = self.index(cluster, width)?;
        let old = self.entries[i];
        self.entries[i] = if old == 0.0 { observed } else { ema_weight * old + (1.0 - ema_weight) * observed };
        Ok(())
    }

    /// First untrained entry in (cluster, width) order that no in-flight
    /// training task is covering.
    pub fn next_training_config(&self) -> TrainingSlot {
        let mut any_pending = false;
        for (i, (&e, &v)) in self.entries.iter().zip(&self.valid).enumerate() {
            if !v || e > 0.0 {
                continue;
            }
            if self.pending[i].is_some() {
                any_pending = true;
                continue;
            }
            return TrainingSlot::Open(PlaceConfig { cluster: i / self.slots, width: 1 << (i % self.slots) });
        }
        if any_pending {
            TrainingSlot::AllPending
        } else {
            TrainingSlot::Trained
        }
    }

    pub fn mark_pending(&mut self, cluster: ClusterId, width: u32, task: TaskId) -> Result<()> {
        let i = self.index(cluster, width)?;
        self.pending[i] = Some(task);
        Ok(())
    }

    /// Clears the marker if `task` holds it.
    pub fn clear_pending(&mut self, cluster: ClusterId, width: u32, task: TaskId) {
        if let Ok(i) = self.index(cluster, width) {
            if self.pending[i] == Some(task) {
                self.pending[i] = None;
            }
        }
    }

    pub fn reset_cluster(&mut self, cluster: ClusterId) {
        let row = cluster * self.slots..(cluster + 1) * self.slots;
        self.entries[row.clone()].fill(0.0);
        self.pending[row].fill(None);
    }

    pub fn dump(&self) -> Vec<Vec<Option<f64>>> {
        self.entries
            .chunks(self.slots)
            .zip(self.valid.chunks(self.slots))
            .map(|(e, v)| e.iter().zip(v).map(|(&e, &v)| v.then_some(e)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingSlot {
    Open(PlaceConfig),
    /// Every untrained entry already has a training task in flight.
    AllPending,
    Trained,
}

/// Training placement: the configuration plus a leader drawn by the
/// aligned-leader formula.
pub fn next_training_place<R: Rng + ?Sized>(
    table: &PerformanceTable,
    topology: &PlatformTopology,
    rng: &mut R,
) -> Option<ExecutionPlace> {
    match table.next_training_config() {
        TrainingSlot::Open(cfg) => Some(random_place(topology, cfg, rng)),
        _ => None,
    }
}

pub fn random_place<R: Rng + ?Sized>(topology: &PlatformTopology, cfg: PlaceConfig, rng: &mut R) -> ExecutionPlace {
    let leader = topology.leader_from_draw(cfg.cluster, cfg.width, rng.random::<u64>());
    ExecutionPlace { leader, width: cfg.width, cluster: cfg.cluster }
}

/// All per-kernel tables plus the per-cluster frequency the model believes
/// each cluster runs at.
#[derive(Debug, Clone)]
pub struct PerfModel {
    topology: PlatformTopology,
    tables: BTreeMap<KernelId, PerformanceTable>,
    observed_freq: Vec<u64>,
    reset_time: f64,
    /// Time of the last detected change per cluster.
    detected_at: Vec<f64>,
    pub ema_weight: f64,
    pub detection_enabled: bool,
    task_types: BTreeMap<(KernelId, u64), TaskType>,
}

impl PerfModel {
    pub fn new(
        topology: &PlatformTopology,
        initial: &FrequencyState,
        ema_weight: f64,
        detection_enabled: bool,
    ) -> Self {
        Self {
            topology: topology.clone(),
            tables: BTreeMap::new(),
            observed_freq: initial.as_slice().to_vec(),
            reset_time: f64::NEG_INFINITY,
            detected_at: vec![f64::NEG_INFINITY; topology.cluster_count()],
            ema_weight,
            detection_enabled,
            task_types: BTreeMap::new(),
        }
    }

    pub fn table(&mut self, kernel: KernelId) -> &mut PerformanceTable {
        let topology = &self.topology;
        self.tables.entry(kernel).or_insert_with(|| PerformanceTable::new(kernel, topology))
    }

    pub fn get(&self, kernel: KernelId) -> Option<&PerformanceTable> {
        self.tables.get(&kernel)
    }

    pub fn tables(&self) -> impl Iterator<Item = &PerformanceTable> {
        self.tables.values()
    }

    pub fn observed_frequency(&self, cluster: ClusterId) -> u64 {
        self.observed_freq[cluster]
    }

    pub fn observed_frequencies(&self) -> &[u64] {
        &self.observed_freq
    }

    /// Whether an observation from a share that started at `start` predates
    /// the last reset.
    pub fn is_stale(&self, start: f64) -> bool {
        start < self.reset_time
    }

    /// Whether a share on `cluster` that started at `start` ran at the
    /// frequency last detected there or a later one. Older shares report
    /// outdated cycle counts.
    pub fn reports_current_frequency(&self, cluster: ClusterId, start: f64) -> bool {
        start >= self.detected_at[cluster]
    }

    /// Snaps cycles / seconds to the nearest level. A change records the new
    /// level and zeroes every entry of every table, so all configurations
    /// retrain under the new frequency.
    pub fn observe_frequency(&mut self, cluster: ClusterId, cycles: f64, seconds: f64, now: f64) -> bool {
        if !self.detection_enabled || !(seconds > 0.0) {
            return false;
        }
        let snapped = self.topology.cluster(cluster).snap_frequency(cycles / seconds);
        if snapped == self.observed_freq[cluster] {
            return false;
        }
        self.observed_freq[cluster] = snapped;
        self.reset_time = now;
        self.detected_at[cluster] = now;
        for t in self.tables.values_mut() {
            for c in 0..self.topology.cluster_count() {
                t.reset_cluster(c);
            }
        }
        true
    }

    pub fn update(&mut self, kernel: KernelId, cluster: ClusterId, width: u32, observed: f64) -> Result<()> {
        let w = self.ema_weight;
        self.table(kernel).update(cluster, width, observed, w)
    }

    pub fn task_type(&self, kernel: KernelId, freq_hz: u64) -> Option<TaskType> {
        self.task_types
            .get(&(kernel, freq_hz))
            .copied()
            .or_else(|| self.task_types.range((kernel, 0)..=(kernel, u64::MAX)).next().map(|(_, t)| *t))
    }

    /// Records the type of a kernel at a frequency the first time it is seen.
    pub fn record_type(&mut self, kernel: KernelId, freq_hz: u64, t: TaskType) {
        self.task_types.entry((kernel, freq_hz)).or_insert(t);
    }

    pub fn task_types(&self) -> &BTreeMap<(KernelId, u64), TaskType> {
        &self.task_types
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDump {
    pub kernel: String,
    /// Seconds per (cluster, width slot); `None` marks widths a cluster lacks.
    pub entries: Vec<Vec<Option<f64>>>,
    pub trained: bool,
}
