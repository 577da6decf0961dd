//! Power profiles, arithmetic intensity and task-type classification.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::platform::{ClusterId, PlatformTopology, TX2_FREQUENCIES_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    MemoryBound,
    CacheIntensive,
    ComputeBound,
}

impl TaskType {
    pub const ALL: [TaskType; 3] = [TaskType::ComputeBound, TaskType::MemoryBound, TaskType::CacheIntensive];

    pub fn key(self) -> &'static str {
        match self {
            TaskType::ComputeBound => "compute",
            TaskType::MemoryBound => "memory",
            TaskType::CacheIntensive => "cache",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        TaskType::ALL.into_iter().find(|t| t.key() == key)
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AiThresholds {
    pub low: f64,
    pub high: f64,
}

impl AiThresholds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && low < high && high.is_finite()) {
            return Err(SimError::InvalidProfile(format!(
                "thresholds must satisfy 0 < low < high, got ({low}, {high})"
            )));
        }
        Ok(Self { low, high })
    }
}

/// FLOPs per byte of last-level-cache traffic. No misses means +inf.
pub fn arithmetic_intensity(cycles: f64, flops_per_cycle: f64, cache_misses: f64) -> f64 {
    if cache_misses <= 0.0 {
        return f64::INFINITY;
    }
    cycles * flops_per_cycle / (cache_misses * 64.0)
}

/// Values equal to a threshold go to the higher class.
pub fn classify(ai: f64, thresholds: &AiThresholds) -> TaskType {
    if ai < thresholds.low {
        TaskType::MemoryBound
    } else if ai < thresholds.high {
        TaskType::CacheIntensive
    } else {
        TaskType::ComputeBound
    }
}

/// 1-D k-means (k = 3) seeded with the minimum, median and maximum distinct
/// values. Thresholds sit halfway between adjacent groups' facing members.
pub fn derive_thresholds(values: &[f64]) -> Result<AiThresholds> {
    if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(SimError::InvalidProfile("AI values must be finite and positive".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(SimError::TooFewAiValues(distinct.len()));
    }
    let m = distinct.len();
    let mut centroids = [distinct[0], distinct[(m - 1) / 2], distinct[m - 1]];
    let mut assign = vec![usize::MAX; sorted.len()];
    for _ in 0..1000 {
        let mut changed = false;
        for (i, &v) in sorted.iter().enumerate() {
            let mut best = 0;
            for c in 1..3 {
                if (v - centroids[c]).abs() < (v - centroids[best]).abs() {
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let (sum, n) = sorted
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if n > 0 {
                *centroid = sum / n as f64;
            }
        }
    }
    let member = |c: usize, last: bool| {
        let mut it = sorted.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(v, _)| *v);
        if last {
            it.next_back()
        } else {
            it.next()
        }
    };
    let (Some(a_hi), Some(b_lo), Some(b_hi), Some(c_lo)) =
        (member(0, true), member(1, false), member(1, true), member(2, false))
    else {
        return Err(SimError::InvalidProfile("k-means produced an empty group".into()));
    };
    AiThresholds::new((a_hi + b_lo) / 2.0, (b_hi + c_lo) / 2.0)
}

type RuntimeKey = (TaskType, ClusterId, u64);

/// Idle and runtime power of one platform, in mW.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile {
    pub platform: String,
    pub cluster_tags: Vec<String>,
    pub idle_power_chip_mw: f64,
    pub idle_power_cluster_mw: Vec<f64>,
    /// Measured (width, mW) points per (type, cluster, frequency), width ascending.
    runtime: BTreeMap<RuntimeKey, Vec<(u32, f64)>>,
    /// Extra power of a core busy in the steal loop or in scheduling code.
    spin: BTreeMap<(ClusterId, u64), f64>,
    pub ai_thresholds: AiThresholds,
}

impl PowerProfile {
    pub fn new(
        platform: impl Into<String>,
        cluster_tags: Vec<String>,
        idle_power_chip_mw: f64,
        idle_power_cluster_mw: Vec<f64>,
        ai_thresholds: AiThresholds,
    ) -> Self {
        Self {
            platform: platform.into(),
            cluster_tags,
            idle_power_chip_mw,
            idle_power_cluster_mw,
            runtime: BTreeMap::new(),
            spin: BTreeMap::new(),
            ai_thresholds,
        }
    }

    pub fn set_runtime(&mut self, task_type: TaskType, cluster: ClusterId, freq_hz: u64, width: u32, mw: f64) {
        let pts = self.runtime.entry((task_type, cluster, freq_hz)).or_default();
        match pts.binary_search_by_key(&width, |p| p.0) {
            Ok(i) => pts[i].1 = mw,
            Err(i) => pts.insert(i, (width, mw)),
        }
    }

    pub fn set_spin(&mut self, cluster: ClusterId, freq_hz: u64, mw: f64) {
        self.spin.insert((cluster, freq_hz), mw);
    }

    pub fn idle_cluster(&self, cluster: ClusterId) -> f64 {
        self.idle_power_cluster_mw[cluster]
    }

    /// Runtime power above idle. Linear in width between measured widths;
    /// a frequency without measurements is an error.
    pub fn lookup_power(&self, task_type: TaskType, cluster: ClusterId, freq_hz: u64, width: u32) -> Result<f64> {
        let missing = || SimError::MissingPower { task_type: task_type.to_string(), cluster, freq_hz, width };
        let pts = self.runtime.get(&(task_type, cluster, freq_hz)).ok_or_else(missing)?;
        match pts.binary_search_by_key(&width, |p| p.0) {
            Ok(i) => Ok(pts[i].1),
            Err(i) if i > 0 && i < pts.len() => {
                let (w0, p0) = pts[i - 1];
                let (w1, p1) = pts[i];
                let t = (width - w0) as f64 / (w1 - w0) as f64;
                Ok(p0 + t * (p1 - p0))
            }
            Err(_) => Err(missing()),
        }
    }

    /// Spin power of one core; unset entries draw nothing.
    pub fn spin_power(&self, cluster: ClusterId, freq_hz: u64) -> f64 {
        self.spin.get(&(cluster, freq_hz)).copied().unwrap_or(0.0)
    }

    pub fn classify(&self, ai: f64) -> TaskType {
        classify(ai, &self.ai_thresholds)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidProfile(m));
        if self.idle_power_cluster_mw.len() != self.cluster_tags.len() {
            return bad("one idle power per cluster required".into());
        }
        if self.idle_power_cluster_mw.iter().any(|p| !(*p >= 0.0)) || !(self.idle_power_chip_mw >= 0.0) {
            return bad("idle powers must be non-negative".into());
        }
        let sum: f64 = self.idle_power_cluster_mw.iter().sum();
        if (sum - self.idle_power_chip_mw).abs() > 1e-9 * self.idle_power_chip_mw.max(1.0) {
            return bad(format!("cluster idle powers sum to {sum}, chip idle is {}", self.idle_power_chip_mw));
        }
        AiThresholds::new(self.ai_thresholds.low, self.ai_thresholds.high)?;
        for (&(t, c, f), pts) in &self.runtime {
            if c >= self.cluster_tags.len() {
                return bad(format!("runtime entry for unknown cluster {c}"));
            }
            if pts.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite())) {
                return bad(format!("non-positive runtime power for ({t}, {c}, {f})"));
            }
            if pts.windows(2).any(|w| w[1].1 <= w[0].1) {
                return bad(format!("runtime power must increase with width for ({t}, {c}, {f})"));
            }
        }
        if self.spin.values().any(|p| !(*p >= 0.0)) {
            return bad("spin power must be non-negative".into());
        }
        Ok(())
    }

    /// Checks that the profile's clusters are the platform's clusters.
    pub fn check_topology(&self, topology: &PlatformTopology) -> Result<()> {
        let tags: Vec<_> = topology.clusters().iter().map(|c| c.tag.clone()).collect();
        if tags != self.cluster_tags {
            return Err(SimError::InvalidProfile(format!(
                "profile clusters {:?} do not match platform clusters {tags:?}",
                self.cluster_tags
            )));
        }
        Ok(())
    }

    /// Frequencies with runtime measurements for a cluster.
    pub fn frequencies(&self, cluster: ClusterId) -> Vec<u64> {
        let mut fs: Vec<u64> = self.runtime.keys().filter(|k| k.1 == cluster).map(|k| k.2).collect();
        fs.sort_unstable();
        fs.dedup();
        fs
    }

    pub fn to_toml(&self) -> String {
        let mut runtime: RuntimeTable = BTreeMap::new();
        for (&(t, c, f), pts) in &self.runtime {
            let slot = runtime
                .entry(t.key().to_string())
                .or_default()
                .entry(self.cluster_tags[c].clone())
                .or_default()
                .entry(f.to_string())
                .or_default();
            for &(w, p) in pts {
                slot.insert(w.to_string(), p);
            }
        }
        let mut spin: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (&(c, f), &p) in &self.spin {
            spin.entry(self.cluster_tags[c].clone()).or_default().insert(f.to_string(), p);
        }
        let file = ProfileFile {
            version: PROFILE_VERSION,
            platform: self.platform.clone(),
            clusters: self.cluster_tags.clone(),
            idle_power_chip_mw: self.idle_power_chip_mw,
            idle_power_cluster_mw: self.idle_power_cluster_mw.clone(),
            ai_thresholds: self.ai_thresholds,
            runtime,
            spin,
        };
        let body = toml::to_string(&file).expect("profile serializes");
        format!(
            "# erase-sim power profile, format version {PROFILE_VERSION}\n\
             # Units: mW. Runtime power is above idle, keyed type -> cluster -> Hz -> width.\n\
             # Preset values not measured on hardware are derived from width-linear fits.\n\n{body}"
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ProfileFile = toml::from_str(text).map_err(|e| SimError::InvalidProfile(e.to_string()))?;
        if file.version != PROFILE_VERSION {
            return Err(SimError::InvalidProfile(format!("unsupported profile version {}", file.version)));
        }
        let cluster_index = |tag: &str| {
            file.clusters
                .iter()
                .position(|t| t == tag)
                .ok_or_else(|| SimError::InvalidProfile(format!("unknown cluster tag '{tag}'")))
        };
        let num =
            |s: &str| s.parse::<u64>().map_err(|_| SimError::InvalidProfile(format!("'{s}' is not an integer key")));
        let mut p = PowerProfile::new(
            file.platform.clone(),
            file.clusters.clone(),
            file.idle_power_chip_mw,
            file.idle_power_cluster_mw.clone(),
            file.ai_thresholds,
        );
        for (tk, by_cluster) in &file.runtime {
            let t =
                TaskType::from_key(tk).ok_or_else(|| SimError::InvalidProfile(format!("unknown task type '{tk}'")))?;
            for (tag, by_freq) in by_cluster {
                let c = cluster_index(tag)?;
                for (fk, by_width) in by_freq {
                    let f = num(fk)?;
                    for (wk, &mw) in by_width {
                        p.set_runtime(t, c, f, num(wk)? as u32, mw);
                    }
                }
            }
        }
        for (tag, by_freq) in &file.spin {
            let c = cluster_index(tag)?;
            for (fk, &mw) in by_freq {
                p.set_spin(c, num(fk)?, mw);
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// Jetson TX2 profile. Compute-bound A57 single-core power, the chip
    /// idle and both cluster idles are measured values; the remaining cells
    /// follow the width-linear structure of the measurements.
    pub fn tx2() -> Self {
        const DENVER: ClusterId = 0;
        const A57: ClusterId = 1;
        let max = TX2_FREQUENCIES_HZ[TX2_FREQUENCIES_HZ.len() - 1];
        let min = TX2_FREQUENCIES_HZ[0];
        let mut p = PowerProfile::new(
            "tx2",
            vec!["denver".into(), "a57".into()],
            228.0,
            vec![76.0, 152.0],
            AiThresholds { low: 6.25, high: 18.75 },
        );
        let grid: [(TaskType, u64, [f64; 2], [f64; 3]); 6] = [
            (TaskType::ComputeBound, max, [1197.0, 2250.0], [989.0, 1960.0, 3900.0]),
            (TaskType::ComputeBound, min, [186.5, 373.0], [76.0, 150.0, 300.0]),
            (TaskType::MemoryBound, max, [1100.0, 1900.0], [600.0, 1200.0, 2400.0]),
            (TaskType::MemoryBound, min, [150.0, 280.0], [60.0, 120.0, 240.0]),
            (TaskType::CacheIntensive, max, [1150.0, 2100.0], [800.0, 1580.0, 3150.0]),
            (TaskType::CacheIntensive, min, [170.0, 330.0], [70.0, 138.0, 272.0]),
        ];
        for (t, f, denver, a57) in grid {
            for (i, mw) in denver.into_iter().enumerate() {
                p.set_runtime(t, DENVER, f, 1 << i, mw);
            }
            for (i, mw) in a57.into_iter().enumerate() {
                p.set_runtime(t, A57, f, 1 << i, mw);
            }
        }
        p.set_spin(DENVER, max, 250.0);
        p.set_spin(DENVER, min, 45.0);
        p.set_spin(A57, max, 120.0);
        p.set_spin(A57, min, 22.0);
        p
    }

    /// Single-cluster server node: every frequency level of the platform
    /// gets width-affine runtime power.
    pub fn symmetric(topology: &PlatformTopology) -> Self {
        let mut p = PowerProfile::new(
            topology.name(),
            vec![topology.cluster(0).tag.clone()],
            40_000.0,
            vec![40_000.0],
            AiThresholds { low: 6.25, high: 18.75 },
        );
        let f_ref = topology.reference_frequency_hz() as f64;
        for &f in &topology.cluster(0).frequency_levels_hz {
            let s = f as f64 / f_ref;
            for (t, base, per_core) in [
                (TaskType::ComputeBound, 3000.0, 2500.0),
                (TaskType::MemoryBound, 2000.0, 1500.0),
                (TaskType::CacheIntensive, 2500.0, 2000.0),
            ] {
                for w in topology.cluster(0).widths() {
                    p.set_runtime(t, 0, f, w, s * (base + per_core * w as f64));
                }
            }
            p.set_spin(0, f, s * 1500.0);
        }
        p
    }

    /// Built-in profile matching a platform preset.
    pub fn for_topology(topology: &PlatformTopology) -> Self {
        if topology.name() == "tx2" {
            Self::tx2()
        } else {
            Self::symmetric(topology)
        }
    }
}

const PROFILE_VERSION: u32 = 1;

/// type → cluster → frequency → width → mW.
type RuntimeTable = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>>;

#[derive(Debug, Serialize, Deserialize)]
struct ProfileFile {
    version: u32,
    platform: String,
    clusters: Vec<String>,
    idle_power_chip_mw: f64,
    idle_power_cluster_mw: Vec<f64>,
    ai_thresholds: AiThresholds,
    runtime: RuntimeTable,
    #[serde(default)]
    spin: BTreeMap<String, BTreeMap<String, f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::kernel::MICROBENCH_AI;

    const MAX: u64 = 2_035_200_000;

    #[test]
    fn ai_examples() {
        assert_eq!(arithmetic_intensity(64.0, 1.0, 1.0), 1.0);
        assert_eq!(arithmetic_intensity(128.0, 2.0, 2.0), 2.0);
        assert_eq!(arithmetic_intensity(10.0, 1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn classification_examples() {
        let th = AiThresholds::new(6.25, 18.75).unwrap();
        assert_eq!(classify(2.07, &th), TaskType::MemoryBound);
        assert_eq!(classify(17.23, &th), TaskType::CacheIntensive);
        assert_eq!(classify(31.5, &th), TaskType::ComputeBound);
        assert_eq!(classify(6.25, &th), TaskType::CacheIntensive);
        assert_eq!(classify(18.75, &th), TaskType::ComputeBound);
        assert_eq!(classify(f64::INFINITY, &th), TaskType::ComputeBound);
    }

    #[test]
    fn threshold_examples() {
        let th = derive_thresholds(&[1.0, 2.0, 15.0, 17.0, 400.0, 450.0]).unwrap();
        assert_eq!((th.low, th.high), (8.5, 208.5));
        let th = derive_thresholds(&[1.0, 10.0, 100.0]).unwrap();
        assert_eq!((th.low, th.high), (5.5, 55.0));
        let th = derive_thresholds(&MICROBENCH_AI).unwrap();
        assert_eq!((th.low, th.high), (6.25, 18.75));
        assert!(matches!(derive_thresholds(&[1.0, 1.0, 2.0]), Err(SimError::TooFewAiValues(2))));
    }

    #[test]
    fn tx2_measured_cells() {
        let p = PowerProfile::tx2();
        p.validate().unwrap();
        assert_eq!(p.lookup_power(TaskType::ComputeBound, 1, MAX, 1).unwrap(), 989.0);
        assert_eq!(p.idle_power_chip_mw, 228.0);
        assert_eq!(p.idle_cluster(1), 152.0);
        assert_eq!(p.idle_cluster(0), 76.0);
    }

    #[test]
    fn width_interpolation_only() {
        let mut p = PowerProfile::new("x", vec!["c".into()], 10.0, vec![10.0], AiThresholds::new(1.0, 2.0).unwrap());
        p.set_runtime(TaskType::ComputeBound, 0, 100, 1, 100.0);
        p.set_runtime(TaskType::ComputeBound, 0, 100, 4, 400.0);
        assert_eq!(p.lookup_power(TaskType::ComputeBound, 0, 100, 2).unwrap(), 200.0);
        assert!(matches!(
            p.lookup_power(TaskType::ComputeBound, 0, 101, 1),
            Err(SimError::MissingPower { freq_hz: 101, .. })
        ));
        assert!(p.lookup_power(TaskType::ComputeBound, 0, 100, 8).is_err());
        assert!(p.lookup_power(TaskType::MemoryBound, 0, 100, 1).is_err());
    }

    #[test]
    fn toml_round_trip_is_exact() {
        for p in [PowerProfile::tx2(), PowerProfile::symmetric(&PlatformTopology::symmetric(16))] {
            let text = p.to_toml();
            assert!(text.starts_with("# erase-sim power profile"));
            assert_eq!(PowerProfile::from_toml(&text).unwrap(), p);
        }
    }

    #[test]
    fn rejects_inconsistent_idle_split() {
        let mut p = PowerProfile::tx2();
        p.idle_power_cluster_mw[0] = 80.0;
        assert!(p.validate().is_err());
    }
}
