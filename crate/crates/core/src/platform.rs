//! Machine model: clusters of homogeneous cores, per-cluster frequency
//! levels and the execution places a moldable task can occupy.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub type CoreId = usize;
pub type ClusterId = usize;

/// Jetson TX2 frequency table (Hz). Intermediate levels are preset data
/// taken from the public TX2 DVFS table.
pub const TX2_FREQUENCIES_HZ: [u64; 12] = [
    345_600_000,
    499_200_000,
    652_800_000,
    806_400_000,
    960_000_000,
    1_113_600_000,
    1_267_200_000,
    1_420_800_000,
    1_574_400_000,
    1_728_000_000,
    1_881_600_000,
    2_035_200_000,
];

/// A cluster of identical cores sharing one frequency domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub tag: String,
    pub core_count: u32,
    pub frequency_levels_hz: Vec<u64>,
    /// Relative single-core speed at the reference frequency.
    pub perf_coefficient: f64,
}

impl ClusterSpec {
    /// Powers of two up to the core count, ascending.
    pub fn widths(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut w = 1;
        while w <= self.core_count {
            out.push(w);
            w *= 2;
        }
        out
    }

    pub fn is_valid_width(&self, width: u32) -> bool {
        width >= 1 && width.is_power_of_two() && width <= self.core_count
    }

    pub fn min_frequency(&self) -> u64 {
        self.frequency_levels_hz[0]
    }

    pub fn max_frequency(&self) -> u64 {
        *self.frequency_levels_hz.last().expect("validated non-empty")
    }

    /// Nearest configured level to a (possibly noisy) frequency estimate.
    pub fn snap_frequency(&self, estimate_hz: f64) -> u64 {
        let mut best = self.frequency_levels_hz[0];
        let mut best_dist = f64::INFINITY;
        for &level in &self.frequency_levels_hz {
            let dist = (level as f64 - estimate_hz).abs();
            if dist < best_dist {
                best = level;
                best_dist = dist;
            }
        }
        best
    }

    fn validate(&self, id: ClusterId) -> Result<()> {
        if self.core_count == 0 {
            return Err(SimError::InvalidTopology(format!("cluster {id} has no cores")));
        }
        if self.frequency_levels_hz.is_empty() {
            return Err(SimError::InvalidTopology(format!("cluster {id} has no frequency levels")));
        }
        if self.frequency_levels_hz.windows(2).any(|w| w[0] >= w[1]) || self.frequency_levels_hz[0] == 0 {
            return Err(SimError::InvalidTopology(format!(
                "cluster {id} frequency levels must be positive and strictly increasing"
            )));
        }
        if !(self.perf_coefficient > 0.0 && self.perf_coefficient.is_finite()) {
            return Err(SimError::InvalidTopology(format!("cluster {id} perf_coefficient must be positive")));
        }
        Ok(())
    }
}

/// One (cluster, width) configuration. Energy and time estimates depend on
/// the configuration only, not on which aligned leader is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlaceConfig {
    pub cluster: ClusterId,
    pub width: u32,
}

/// The cores a task runs on: `width` consecutive cores starting at an
/// aligned `leader`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExecutionPlace {
    pub leader: CoreId,
    pub width: u32,
    pub cluster: ClusterId,
}

impl ExecutionPlace {
    pub fn config(&self) -> PlaceConfig {
        PlaceConfig { cluster: self.cluster, width: self.width }
    }

    pub fn cores(&self) -> Range<CoreId> {
        self.leader..self.leader + self.width as usize
    }

    pub fn contains(&self, core: CoreId) -> bool {
        self.cores().contains(&core)
    }
}

/// Serializable description of a platform, as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub name: String,
    /// Frequency at which `perf_coefficient` and kernel work units are defined.
    pub reference_frequency_hz: u64,
    pub clusters: Vec<ClusterSpec>,
}

/// Immutable machine description with cluster-major global core ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformTopology {
    name: String,
    reference_frequency_hz: u64,
    clusters: Vec<ClusterSpec>,
    base: Vec<CoreId>,
    total_cores: usize,
}

impl PlatformTopology {
    pub fn new(name: impl Into<String>, reference_frequency_hz: u64, clusters: Vec<ClusterSpec>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(SimError::InvalidTopology("no clusters".into()));
        }
        if reference_frequency_hz == 0 {
            return Err(SimError::InvalidTopology("reference frequency must be positive".into()));
        }
        let mut base = Vec::with_capacity(clusters.len());
        let mut next = 0usize;
        for (id, c) in clusters.iter().enumerate() {
            c.validate(id)?;
            base.push(next);
            next += c.core_count as usize;
        }
        Ok(Self { name: name.into(), reference_frequency_hz, clusters, base, total_cores: next })
    }

    pub fn from_file(file: TopologyFile) -> Result<Self> {
        Self::new(file.name, file.reference_frequency_hz, file.clusters)
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            name: self.name.clone(),
            reference_frequency_hz: self.reference_frequency_hz,
            clusters: self.clusters.clone(),
        }
    }

    /// NVIDIA Jetson TX2: Denver x2 (cluster 0, cores C0-C1) and A57 x4
    /// (cluster 1, cores C2-C5).
    pub fn tx2() -> Self {
        let freqs = TX2_FREQUENCIES_HZ.to_vec();
        Self::new(
            "tx2",
            *TX2_FREQUENCIES_HZ.last().unwrap(),
            vec![
                ClusterSpec {
                    tag: "denver".into(),
                    core_count: 2,
                    frequency_levels_hz: freqs.clone(),
                    perf_coefficient: 2.0,
                },
                ClusterSpec { tag: "a57".into(), core_count: 4, frequency_levels_hz: freqs, perf_coefficient: 1.0 },
            ],
        )
        .expect("tx2 preset is valid")
    }

    /// A single-cluster symmetric node with `cores` cores at a fixed 2.1 GHz.
    pub fn symmetric(cores: u32) -> Self {
        Self::new(
            format!("sym{cores}"),
            2_100_000_000,
            vec![ClusterSpec {
                tag: "xeon".into(),
                core_count: cores,
                frequency_levels_hz: vec![2_100_000_000],
                perf_coefficient: 1.0,
            }],
        )
        .expect("symmetric preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tx2" => Some(Self::tx2()),
            "sym16" | "symmetric" => Some(Self::symmetric(16)),
            _ => name.strip_prefix("sym").and_then(|n| n.parse::<u32>().ok()).filter(|&n| n >= 1).map(Self::symmetric),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn reference_frequency_hz(&self) -> u64 {
        self.reference_frequency_hz
    }

    pub fn clusters(&self) -> &[ClusterSpec] {
        &self.clusters
    }

    pub fn cluster(&self, id: ClusterId) -> &ClusterSpec {
        &self.clusters[id]
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn total_cores(&self) -> usize {
        self.total_cores
    }

    pub fn cluster_base(&self, id: ClusterId) -> CoreId {
        self.base[id]
    }

    pub fn cores_of(&self, id: ClusterId) -> Range<CoreId> {
        let b = self.base[id];
        b..b + self.clusters[id].core_count as usize
    }

    pub fn cluster_of(&self, core: CoreId) -> ClusterId {
        debug_assert!(core < self.total_cores);
        match self.base.binary_search(&core) {
            Ok(i) => {
                // Skip over any zero-width predecessor (cannot happen after validation).
                i
            }
            Err(i) => i - 1,
        }
    }

    pub fn cluster_by_tag(&self, tag: &str) -> Option<ClusterId> {
        self.clusters.iter().position(|c| c.tag == tag)
    }

    /// Widest width count over all clusters (the column count of a
    /// performance table).
    pub fn max_width_slots(&self) -> usize {
        self.clusters.iter().map(|c| c.widths().len()).max().unwrap_or(0)
    }

    /// Every (cluster, width) configuration, cluster ascending then width
    /// ascending.
    pub fn enumerate_places(&self) -> Vec<PlaceConfig> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(cluster, c)| c.widths().into_iter().map(move |width| PlaceConfig { cluster, width }))
            .collect()
    }

    /// Global ids of the aligned leaders for a width: offsets 0, w, 2w, ...
    pub fn aligned_leaders(&self, cluster: ClusterId, width: u32) -> Result<Vec<CoreId>> {
        let spec =
            self.clusters.get(cluster).ok_or_else(|| SimError::InvalidTopology(format!("no cluster {cluster}")))?;
        if !spec.is_valid_width(width) {
            return Err(SimError::InvalidWidth { cluster, width });
        }
        let base = self.base[cluster];
        Ok((0..spec.core_count / width).map(|k| base + (k * width) as usize).collect())
    }

    /// Leader chosen by `base + (r % (cores / width)) * width`.
    pub fn leader_from_draw(&self, cluster: ClusterId, width: u32, draw: u64) -> CoreId {
        let spec = &self.clusters[cluster];
        let slots = (spec.core_count / width) as u64;
        self.base[cluster] + ((draw % slots) as u32 * width) as usize
    }

    /// Build a validated place.
    pub fn place(&self, leader: CoreId, width: u32) -> Result<ExecutionPlace> {
        if leader >= self.total_cores {
            return Err(SimError::InvalidTopology(format!("no core {leader}")));
        }
        let cluster = self.cluster_of(leader);
        let spec = &self.clusters[cluster];
        if !spec.is_valid_width(width) {
            return Err(SimError::InvalidWidth { cluster, width });
        }
        if !(leader - self.base[cluster]).is_multiple_of(width as usize) {
            return Err(SimError::MisalignedLeader { cluster, core: leader, width });
        }
        Ok(ExecutionPlace { leader, width, cluster })
    }

    /// The aligned place of `width` that contains `core`.
    pub fn anchored_place(&self, core: CoreId, width: u32) -> Result<ExecutionPlace> {
        let cluster = self.cluster_of(core);
        let base = self.base[cluster];
        let w = width as usize;
        self.place(base + (core - base) / w * w, width)
    }

    /// Cluster speed at a frequency, used to pick the "fast" cluster.
    pub fn speed_at(&self, cluster: ClusterId, freq_hz: u64) -> f64 {
        self.clusters[cluster].perf_coefficient * freq_hz as f64 / self.reference_frequency_hz as f64
    }

    /// Parses "MIN", "MAX", a level index ("0".."11") or an exact Hz value.
    pub fn resolve_level(&self, cluster: ClusterId, level: &str) -> Result<u64> {
        let spec = &self.clusters[cluster];
        let s = level.trim();
        match s.to_ascii_uppercase().as_str() {
            "MIN" => return Ok(spec.min_frequency()),
            "MAX" => return Ok(spec.max_frequency()),
            _ => {}
        }
        let n: u64 =
            s.parse().map_err(|_| SimError::InvalidTopology(format!("cannot parse frequency level '{level}'")))?;
        if (n as usize) < spec.frequency_levels_hz.len() {
            return Ok(spec.frequency_levels_hz[n as usize]);
        }
        if spec.frequency_levels_hz.contains(&n) {
            return Ok(n);
        }
        Err(SimError::UnknownFrequency { cluster, freq_hz: n })
    }
}

/// Current frequency of every cluster. All cores of a cluster share it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyState {
    per_cluster: Vec<u64>,
}

impl FrequencyState {
    pub fn all_max(topology: &PlatformTopology) -> Self {
        Self { per_cluster: topology.clusters.iter().map(|c| c.max_frequency()).collect() }
    }

    pub fn all_min(topology: &PlatformTopology) -> Self {
        Self { per_cluster: topology.clusters.iter().map(|c| c.min_frequency()).collect() }
    }

    pub fn new(topology: &PlatformTopology, per_cluster: Vec<u64>) -> Result<Self> {
        if per_cluster.len() != topology.cluster_count() {
            return Err(SimError::InvalidTopology(format!(
                "expected {} cluster frequencies, got {}",
                topology.cluster_count(),
                per_cluster.len()
            )));
        }
        for (cluster, &f) in per_cluster.iter().enumerate() {
            if !topology.cluster(cluster).frequency_levels_hz.contains(&f) {
                return Err(SimError::UnknownFrequency { cluster, freq_hz: f });
            }
        }
        Ok(Self { per_cluster })
    }

    pub fn get(&self, cluster: ClusterId) -> u64 {
        self.per_cluster[cluster]
    }

    pub fn set(&mut self, topology: &PlatformTopology, cluster: ClusterId, freq_hz: u64) -> Result<()> {
        if !topology.cluster(cluster).frequency_levels_hz.contains(&freq_hz) {
            return Err(SimError::UnknownFrequency { cluster, freq_hz });
        }
        self.per_cluster[cluster] = freq_hz;
        Ok(())
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.per_cluster
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tx2_has_five_configurations() {
        let t = PlatformTopology::tx2();
        let configs = t.enumerate_places();
        let pairs: Vec<_> = configs.iter().map(|c| (c.cluster, c.width)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 1), (1, 2), (1, 4)]);
    }

    #[test]
    fn single_core_has_one_configuration() {
        let t = PlatformTopology::symmetric(1);
        assert_eq!(t.enumerate_places(), vec![PlaceConfig { cluster: 0, width: 1 }]);
    }

    #[test]
    fn two_quad_clusters_have_six_configurations() {
        let c = ClusterSpec {
            tag: "x".into(),
            core_count: 4,
            frequency_levels_hz: vec![1_000_000_000],
            perf_coefficient: 1.0,
        };
        let t = PlatformTopology::new("2x4", 1_000_000_000, vec![c.clone(), c]).unwrap();
        assert_eq!(t.enumerate_places().len(), 6);
    }

    #[test]
    fn aligned_leaders_on_tx2() {
        let t = PlatformTopology::tx2();
        assert_eq!(t.aligned_leaders(1, 2).unwrap(), vec![2, 4]);
        assert_eq!(t.aligned_leaders(1, 4).unwrap(), vec![2]);
        assert_eq!(t.aligned_leaders(0, 1).unwrap(), vec![0, 1]);
        assert!(matches!(t.aligned_leaders(1, 3), Err(SimError::InvalidWidth { .. })));
        assert!(t.aligned_leaders(0, 4).is_err());
    }

    #[test]
    fn cluster_major_numbering() {
        let t = PlatformTopology::tx2();
        assert_eq!(t.total_cores(), 6);
        assert_eq!(t.cores_of(0), 0..2);
        assert_eq!(t.cores_of(1), 2..6);
        assert_eq!((0..6).map(|c| t.cluster_of(c)).collect::<Vec<_>>(), vec![0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn anchored_place_rounds_down_to_alignment() {
        let t = PlatformTopology::tx2();
        let p = t.anchored_place(3, 2).unwrap();
        assert_eq!((p.leader, p.width, p.cluster), (2, 2, 1));
        assert!(t.place(3, 2).is_err());
    }

    #[test]
    fn frequency_aliases() {
        let t = PlatformTopology::tx2();
        assert_eq!(t.resolve_level(0, "MIN").unwrap(), 345_600_000);
        assert_eq!(t.resolve_level(1, "max").unwrap(), 2_035_200_000);
        assert_eq!(t.resolve_level(1, "3").unwrap(), 806_400_000);
        assert!(t.resolve_level(1, "123").is_err());
        assert_eq!(t.cluster(0).snap_frequency(2.04e9), 2_035_200_000);
        assert_eq!(t.cluster(0).snap_frequency(0.35e9), 345_600_000);
    }

    #[test]
    fn rejects_bad_clusters() {
        let bad =
            ClusterSpec { tag: "x".into(), core_count: 2, frequency_levels_hz: vec![2, 1], perf_coefficient: 1.0 };
        assert!(PlatformTopology::new("bad", 1, vec![bad]).is_err());
    }
}
