//! Core activity tracing: which cores are awake, and the share of idle
//! power a task is billed for.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::platform::{ClusterId, CoreId, ExecutionPlace, PlatformTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreStatus {
    Sleep = 0,
    Active = 1,
}

/// Instantaneous status of every core. Only back-off sleep clears a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreStatusBoard {
    status: Vec<CoreStatus>,
    last_transition: Vec<f64>,
    cluster_ranges: Vec<std::ops::Range<CoreId>>,
}

impl CoreStatusBoard {
    pub fn new(topology: &PlatformTopology) -> Self {
        let n = topology.total_cores();
        Self {
            status: vec![CoreStatus::Active; n],
            last_transition: vec![0.0; n],
            cluster_ranges: (0..topology.cluster_count()).map(|c| topology.cores_of(c)).collect(),
        }
    }

    pub fn from_statuses(topology: &PlatformTopology, status: Vec<CoreStatus>) -> Self {
        let mut b = Self::new(topology);
        assert_eq!(status.len(), b.status.len());
        b.status = status;
        b
    }

    pub fn status(&self, core: CoreId) -> CoreStatus {
        self.status[core]
    }

    pub fn is_active(&self, core: CoreId) -> bool {
        self.status[core] == CoreStatus::Active
    }

    pub fn last_transition(&self, core: CoreId) -> f64 {
        self.last_transition[core]
    }

    pub fn set_active(&mut self, core: CoreId, now: f64) {
        if self.status[core] != CoreStatus::Active {
            self.status[core] = CoreStatus::Active;
            self.last_transition[core] = now;
        }
    }

    pub fn set_sleep(&mut self, core: CoreId, now: f64) {
        if self.status[core] != CoreStatus::Sleep {
            self.status[core] = CoreStatus::Sleep;
            self.last_transition[core] = now;
        }
    }

    pub fn count_active(&self, cluster: ClusterId) -> u32 {
        self.cluster_ranges[cluster].clone().filter(|&c| self.is_active(c)).count() as u32
    }

    /// Active cores of the place's cluster plus the place's sleeping cores,
    /// which will wake to run the task.
    pub fn effective_active_for_place(&self, place: &ExecutionPlace) -> u32 {
        let woken = place.cores().filter(|&c| !self.is_active(c)).count() as u32;
        self.count_active(place.cluster) + woken
    }

    pub fn any_active_outside(&self, cluster: ClusterId) -> bool {
        (0..self.cluster_ranges.len()).filter(|&c| c != cluster).any(|c| self.count_active(c) > 0)
    }
}

pub fn resource_occupation(width: u32, effective_active: u32) -> Result<f64> {
    if width == 0 || effective_active < width {
        return Err(SimError::Occupation { width, active: effective_active });
    }
    Ok(width as f64 / effective_active as f64)
}
