//! Energy-minimizing task mapping over every (cluster, width)
//! configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activity::{resource_occupation, CoreStatusBoard};
use crate::error::{Result, SimError};
use crate::perf::{random_place, PerfModel, TrainingSlot};
use crate::platform::{ExecutionPlace, PlatformTopology};
use crate::power::PowerProfile;
use crate::workload::KernelId;

/// Predicted cost of running one task on one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub place: ExecutionPlace,
    pub idle_power_share_mw: f64,
    pub runtime_power_mw: f64,
    pub predicted_seconds: f64,
    pub predicted_energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapDecision {
    /// The kernel's table still has an untrained entry; run there.
    Training(ExecutionPlace),
    Energy {
        chosen: EnergyEstimate,
        /// One estimate per configuration, in enumeration order.
        alternatives: Vec<EnergyEstimate>,
    },
    /// Every untrained entry is already being trained; wait for a result.
    Deferred,
}

impl MapDecision {
    pub fn place(&self) -> Option<ExecutionPlace> {
        match self {
            MapDecision::Training(p) => Some(*p),
            MapDecision::Energy { chosen, .. } => Some(chosen.place),
            MapDecision::Deferred => None,
        }
    }
}

/// Read-only view the mapper needs.
#[derive(Clone, Copy)]
pub struct MapInputs<'a> {
    pub topology: &'a PlatformTopology,
    pub board: &'a CoreStatusBoard,
    pub perf: &'a PerfModel,
    pub profile: &'a PowerProfile,
}

/// One randomly drawn aligned place per configuration, in (cluster, width)
/// order.
pub fn candidate_places<R: Rng + ?Sized>(topology: &PlatformTopology, rng: &mut R) -> Vec<ExecutionPlace> {
    topology.enumerate_places().into_iter().map(|cfg| random_place(topology, cfg, rng)).collect()
}

/// Estimate for one candidate place.
pub fn estimate(inputs: &MapInputs<'_>, kernel: KernelId, place: ExecutionPlace) -> Result<EnergyEstimate> {
    let MapInputs { board, perf, profile, .. } = *inputs;
    let c = place.cluster;
    let table = perf.get(kernel).ok_or(SimError::Untrained { kernel, cluster: c, width: place.width })?;
    let predicted_seconds = table.predict(c, place.width)?;
    let base = if board.any_active_outside(c) { profile.idle_cluster(c) } else { profile.idle_power_chip_mw };
    let occ = resource_occupation(place.width, board.effective_active_for_place(&place))?;
    let freq = perf.observed_frequency(c);
    let task_type = perf.task_type(kernel, freq).ok_or(SimError::Empty("task type of a trained kernel"))?;
    let runtime_power_mw = profile.lookup_power(task_type, c, freq, place.width)?;
    let idle_power_share_mw = base * occ;
    Ok(EnergyEstimate {
        place,
        idle_power_share_mw,
        runtime_power_mw,
        predicted_seconds,
        predicted_energy_mj: (idle_power_share_mw + runtime_power_mw) * predicted_seconds,
    })
}

/// Training placement while the kernel's table has gaps, otherwise the
/// minimum-energy candidate. Ties keep the earliest configuration.
pub fn map_task<R: Rng + ?Sized>(inputs: &MapInputs<'_>, kernel: KernelId, rng: &mut R) -> Result<MapDecision> {
    let slot = match inputs.perf.get(kernel) {
        Some(t) => t.next_training_config(),
        None => TrainingSlot::Open(inputs.topology.enumerate_places()[0]),
    };
    match slot {
        TrainingSlot::Open(cfg) => return Ok(MapDecision::Training(random_place(inputs.topology, cfg, rng))),
        TrainingSlot::AllPending => return Ok(MapDecision::Deferred),
        TrainingSlot::Trained => {}
    }
    let alternatives = candidate_places(inputs.topology, rng)
        .into_iter()
        .map(|p| estimate(inputs, kernel, p))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, e) in alternatives.iter().enumerate() {
        if e.predicted_energy_mj < alternatives[best].predicted_energy_mj {
            best = i;
        }
    }
    Ok(MapDecision::Energy { chosen: alternatives[best], alternatives })
}

/// Predicted-versus-actual outcome of one energy-mapped task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub task: usize,
    pub predicted_seconds: f64,
    pub actual_seconds: f64,
    pub predicted_energy_mj: f64,
    pub actual_energy_mj: f64,
}

pub fn predicted_vs_actual_log(
    task: usize,
    estimate: &EnergyEstimate,
    actual_seconds: f64,
    actual_energy_mj: f64,
) -> PredictionRecord {
    PredictionRecord {
        task,
        predicted_seconds: estimate.predicted_seconds,
        actual_seconds,
        predicted_energy_mj: estimate.predicted_energy_mj,
        actual_energy_mj,
    }
}
