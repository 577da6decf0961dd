//! Scheduling policies and the placement rules of the comparison
//! schedulers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::perf::PerformanceTable;
use crate::platform::{ClusterId, CoreId, ExecutionPlace, FrequencyState, PlatformTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerPolicy {
    Erase,
    Rws,
    Cats,
    Calc,
}

impl SchedulerPolicy {
    pub const ALL: [SchedulerPolicy; 4] =
        [SchedulerPolicy::Erase, SchedulerPolicy::Rws, SchedulerPolicy::Cats, SchedulerPolicy::Calc];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerPolicy::Erase => "erase",
            SchedulerPolicy::Rws => "rws",
            SchedulerPolicy::Cats => "cats",
            SchedulerPolicy::Calc => "calc",
        }
    }

    /// Whether the policy consults performance tables.
    pub fn uses_models(self) -> bool {
        matches!(self, SchedulerPolicy::Erase | SchedulerPolicy::Calc)
    }

    /// Whether `thief` may take work from `victim`'s queue.
    pub fn may_steal(
        self,
        topology: &PlatformTopology,
        fast: Option<ClusterId>,
        thief: CoreId,
        victim: CoreId,
    ) -> bool {
        if thief == victim {
            return false;
        }
        let (ct, cv) = (topology.cluster_of(thief), topology.cluster_of(victim));
        match self {
            SchedulerPolicy::Rws => true,
            SchedulerPolicy::Cats => Some(ct) == fast || Some(cv) != fast,
            SchedulerPolicy::Erase | SchedulerPolicy::Calc => ct == cv,
        }
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SchedulerPolicy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy '{s}' (expected erase, rws, cats or calc)"))
    }
}

pub fn rws_place(topology: &PlatformTopology, core: CoreId) -> ExecutionPlace {
    ExecutionPlace { leader: core, width: 1, cluster: topology.cluster_of(core) }
}

/// Cluster with the highest perf coefficient times current frequency.
/// Ties keep the lower id. Single-cluster platforms have none.
pub fn fast_cluster(topology: &PlatformTopology, freqs: &FrequencyState) -> Result<ClusterId> {
    if topology.cluster_count() < 2 {
        return Err(SimError::PolicyUnsupported {
            policy: "cats",
            reason: "it needs an asymmetric platform with at least two clusters".into(),
        });
    }
    let mut best = 0;
    for c in 1..topology.cluster_count() {
        if topology.speed_at(c, freqs.get(c)) > topology.speed_at(best, freqs.get(best)) {
            best = c;
        }
    }
    Ok(best)
}

/// Critical tasks go to the fast cluster, others to a slow one. The
/// releasing core keeps the task when it is on the right side.
pub fn cats_place<R: Rng + ?Sized>(
    topology: &PlatformTopology,
    fast: ClusterId,
    critical: bool,
    releasing: CoreId,
    rng: &mut R,
) -> ExecutionPlace {
    let on_fast = topology.cluster_of(releasing) == fast;
    if critical == on_fast {
        return rws_place(topology, releasing);
    }
    let pool: Vec<CoreId> = if critical {
        topology.cores_of(fast).collect()
    } else {
        (0..topology.total_cores()).filter(|&c| topology.cluster_of(c) != fast).collect()
    };
    rws_place(topology, pool[rng.random_range(0..pool.len())])
}

/// CALC's choice for a trained table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalcChoice {
    pub place: ExecutionPlace,
    pub predicted_seconds: f64,
    pub stealable: bool,
}

/// Minimizes predicted time times width. Critical tasks search every
/// configuration and are pinned; others stay in the releasing core's
/// cluster on the aligned block containing it. Ties keep the smaller
/// width, then the lower cluster.
pub fn calc_place<R: Rng + ?Sized>(
    topology: &PlatformTopology,
    table: &PerformanceTable,
    critical: bool,
    releasing: CoreId,
    rng: &mut R,
) -> Result<CalcChoice> {
    let mut best: Option<(f64, u32, ClusterId, f64)> = None;
    let clusters: Vec<ClusterId> =
        if critical { (0..topology.cluster_count()).collect() } else { vec![topology.cluster_of(releasing)] };
    for &c in &clusters {
        for w in topology.cluster(c).widths() {
            let t = table.predict(c, w)?;
            let cost = t * w as f64;
            let better = match best {
                None => true,
                Some((bc, bw, bcl, _)) => cost < bc || (cost == bc && (w, c) < (bw, bcl)),
            };
            if better {
                best = Some((cost, w, c, t));
            }
        }
    }
    let (_, width, cluster, predicted_seconds) = best.expect("every cluster has width 1");
    let place = if critical {
        let leader = topology.leader_from_draw(cluster, width, rng.random::<u64>());
        topology.place(leader, width)?
    } else {
        topology.anchored_place(releasing, width)?
    };
    Ok(CalcChoice { place, predicted_seconds, stealable: !critical })
}
