use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::platform::{PlatformTopology, TX2_FREQUENCIES_HZ};

/// Parallel efficiency of a kernel on one cluster as a function of width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Scaling {
    /// `efficiency[i]` is the efficiency at width `2^i`.
    Table { efficiency: Vec<f64> },
    /// Amdahl's law with the given serial fraction.
    Amdahl { serial_fraction: f64 },
}

impl Scaling {
    pub fn perfect() -> Self {
        Scaling::Amdahl { serial_fraction: 0.0 }
    }

    /// Efficiency at a power-of-two width.
    pub fn efficiency(&self, width: u32) -> f64 {
        match self {
            Scaling::Table { efficiency } => {
                let idx = width.trailing_zeros() as usize;
                efficiency[idx.min(efficiency.len() - 1)]
            }
            Scaling::Amdahl { serial_fraction } => {
                let w = width as f64;
                1.0 / (w * serial_fraction + (1.0 - serial_fraction))
            }
        }
    }

    fn validate(&self, kernel: &str, max_width: u32) -> Result<()> {
        let err = |reason: String| SimError::InvalidKernel { name: kernel.to_string(), reason };
        match self {
            Scaling::Table { efficiency } => {
                if efficiency.is_empty() || efficiency[0] != 1.0 {
                    return Err(err("efficiency at width 1 must be exactly 1".into()));
                }
                if efficiency.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                    return Err(err("efficiencies must lie in (0, 1]".into()));
                }
                if efficiency.windows(2).any(|p| p[1] > p[0]) {
                    return Err(err("efficiencies must be non-increasing in width".into()));
                }
            }
            Scaling::Amdahl { serial_fraction } => {
                if !(0.0..=1.0).contains(serial_fraction) {
                    return Err(err("serial_fraction must lie in [0, 1]".into()));
                }
            }
        }
        let mut prev = 0.0;
        let mut w = 1;
        while w <= max_width {
            let speedup = w as f64 * self.efficiency(w);
            if speedup < prev {
                return Err(err(format!("speedup decreases at width {w}")));
            }
            prev = speedup;
            w *= 2;
        }
        Ok(())
    }
}

/// Arithmetic intensity the kernel exhibits at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AiPoint {
    pub freq_hz: u64,
    pub ai: f64,
}

/// A family of identical task routines with a ground-truth cost profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    /// Single-core seconds on a reference-speed core at the reference frequency.
    pub work_units: f64,
    /// Exponent applied to the relative frequency (1 = compute-bound scaling).
    pub frequency_sensitivity: f64,
    pub flops_per_cycle: f64,
    /// Sorted by frequency; AI is interpolated linearly and clamped at the ends.
    pub ai_curve: Vec<AiPoint>,
    /// Scaling per cluster tag. Clusters without an entry use `default_scaling`.
    #[serde(default)]
    pub scaling: BTreeMap<String, Scaling>,
    #[serde(default = "Scaling::perfect")]
    pub default_scaling: Scaling,
    /// Per-cluster-tag speed multiplier on top of the cluster's perf coefficient.
    #[serde(default)]
    pub cluster_affinity: BTreeMap<String, f64>,
}

impl KernelSpec {
    pub fn scaling_for(&self, cluster_tag: &str) -> &Scaling {
        self.scaling.get(cluster_tag).unwrap_or(&self.default_scaling)
    }

    pub fn affinity_for(&self, cluster_tag: &str) -> f64 {
        self.cluster_affinity.get(cluster_tag).copied().unwrap_or(1.0)
    }

    pub fn efficiency(&self, cluster_tag: &str, width: u32) -> f64 {
        self.scaling_for(cluster_tag).efficiency(width)
    }

    pub fn ai_at(&self, freq_hz: u64) -> f64 {
        let f = freq_hz as f64;
        let pts = &self.ai_curve;
        if f <= pts[0].freq_hz as f64 {
            return pts[0].ai;
        }
        for pair in pts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if f <= b.freq_hz as f64 {
                let t = (f - a.freq_hz as f64) / (b.freq_hz as f64 - a.freq_hz as f64);
                return a.ai + t * (b.ai - a.ai);
            }
        }
        pts[pts.len() - 1].ai
    }

    pub fn validate(&self, topology: &PlatformTopology) -> Result<()> {
        let err = |reason: &str| SimError::InvalidKernel { name: self.name.clone(), reason: reason.to_string() };
        if !(self.work_units > 0.0 && self.work_units.is_finite()) {
            return Err(err("work_units must be positive"));
        }
        if !(0.0..=1.0).contains(&self.frequency_sensitivity) {
            return Err(err("frequency_sensitivity must lie in [0, 1]"));
        }
        if !(self.flops_per_cycle > 0.0 && self.flops_per_cycle.is_finite()) {
            return Err(err("flops_per_cycle must be positive"));
        }
        if self.ai_curve.is_empty() {
            return Err(err("ai_curve needs at least one point"));
        }
        if self.ai_curve.windows(2).any(|p| p[0].freq_hz >= p[1].freq_hz) {
            return Err(err("ai_curve frequencies must be strictly increasing"));
        }
        if self.ai_curve.iter().any(|p| !(p.ai > 0.0)) {
            return Err(err("arithmetic intensities must be positive"));
        }
        if self.cluster_affinity.values().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(err("cluster affinities must be positive"));
        }
        for c in topology.clusters() {
            self.scaling_for(&c.tag).validate(&self.name, c.core_count)?;
        }
        Ok(())
    }
}

fn table(eff: &[f64]) -> Scaling {
    Scaling::Table { efficiency: eff.to_vec() }
}

fn tx2_ai(at_max: f64, at_min: f64) -> Vec<AiPoint> {
    vec![
        AiPoint { freq_hz: TX2_FREQUENCIES_HZ[0], ai: at_min },
        AiPoint { freq_hz: TX2_FREQUENCIES_HZ[TX2_FREQUENCIES_HZ.len() - 1], ai: at_max },
    ]
}

fn tags(pairs: &[(&str, Scaling)]) -> BTreeMap<String, Scaling> {
    pairs.iter().map(|(t, s)| (t.to_string(), s.clone())).collect()
}

/// Dense tiled matrix multiplication: compute-bound and scales well.
pub fn matmul() -> KernelSpec {
    KernelSpec {
        name: "matmul".into(),
        work_units: 2.5e-3,
        frequency_sensitivity: 1.0,
        flops_per_cycle: 2.0,
        ai_curve: tx2_ai(423.8, 400.6),
        scaling: tags(&[("denver", table(&[1.0, 1.0])), ("a57", table(&[1.0, 0.99, 0.97]))]),
        default_scaling: Scaling::Amdahl { serial_fraction: 0.01 },
        cluster_affinity: BTreeMap::new(),
    }
}

/// Streaming array copy: memory-bound, barely frequency-sensitive,
/// saturates bandwidth at small widths.
pub fn copy() -> KernelSpec {
    KernelSpec {
        name: "copy".into(),
        work_units: 2.0e-3,
        frequency_sensitivity: 0.3,
        flops_per_cycle: 0.25,
        ai_curve: tx2_ai(2.07, 1.03),
        scaling: tags(&[("denver", table(&[1.0, 0.7])), ("a57", table(&[1.0, 0.75, 0.6]))]),
        default_scaling: Scaling::Amdahl { serial_fraction: 0.3 },
        cluster_affinity: [("denver".to_string(), 0.75)].into_iter().collect(),
    }
}

/// 2-D Jacobi-style stencil: cache-intensive.
pub fn stencil() -> KernelSpec {
    KernelSpec {
        name: "stencil".into(),
        work_units: 2.0e-3,
        frequency_sensitivity: 0.7,
        flops_per_cycle: 1.0,
        ai_curve: tx2_ai(17.23, 16.88),
        scaling: tags(&[("denver", table(&[1.0, 0.85])), ("a57", table(&[1.0, 0.9, 0.8]))]),
        default_scaling: Scaling::Amdahl { serial_fraction: 0.08 },
        cluster_affinity: [("denver".to_string(), 0.8)].into_iter().collect(),
    }
}

fn lu_kernel(name: &str, work_units: f64, serial_fraction: f64) -> KernelSpec {
    KernelSpec {
        name: name.into(),
        work_units,
        frequency_sensitivity: 0.9,
        flops_per_cycle: 1.5,
        ai_curve: tx2_ai(31.5, 23.8),
        scaling: BTreeMap::new(),
        default_scaling: Scaling::Amdahl { serial_fraction },
        cluster_affinity: BTreeMap::new(),
    }
}

/// The four blocked-LU kernels: diagonal factorization, row and column
/// triangular solves and the trailing update.
pub fn sparselu_kernels() -> [KernelSpec; 4] {
    [
        lu_kernel("lu0", 0.7e-3, 0.15),
        lu_kernel("fwd", 1.0e-3, 0.05),
        lu_kernel("bdiv", 1.0e-3, 0.05),
        lu_kernel("bmod", 2.0e-3, 0.02),
    ]
}

/// Kernel preset by name.
pub fn preset(name: &str) -> Option<KernelSpec> {
    match name {
        "matmul" => Some(matmul()),
        "copy" => Some(copy()),
        "stencil" => Some(stencil()),
        _ => sparselu_kernels().into_iter().find(|k| k.name == name),
    }
}

/// Arithmetic intensities of the profiling microbenchmarks. Grouped into
/// three clusters whose frontier midpoints are 6.25 and 18.75.
pub const MICROBENCH_AI: [f64; 9] = [1.0, 2.5, 4.5, 8.0, 12.0, 17.0, 20.5, 23.0, 26.0];

/// Synthetic microbenchmark kernels with the given AI, flat across frequency.
pub fn microbench(ai: f64, topology: &PlatformTopology) -> KernelSpec {
    let lo = topology.clusters().iter().map(|c| c.min_frequency()).min().unwrap();
    KernelSpec {
        name: format!("ubench-ai{ai}"),
        work_units: 1.0e-3,
        frequency_sensitivity: 0.5,
        flops_per_cycle: 1.0,
        ai_curve: vec![AiPoint { freq_hz: lo, ai }],
        scaling: BTreeMap::new(),
        default_scaling: Scaling::perfect(),
        cluster_affinity: BTreeMap::new(),
    }
}
