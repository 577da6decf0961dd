use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::platform::{ClusterId, PlatformTopology};

use super::kernel::KernelSpec;

/// Hardware counters a task's leader reads after execution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub cycles: f64,
    pub flops_per_cycle: f64,
    pub cache_misses: f64,
}

/// Noise-free execution time of one task instance on `width` cores of
/// `cluster` at `freq_hz`.
pub fn ground_truth_time(
    kernel: &KernelSpec,
    cluster: ClusterId,
    width: u32,
    freq_hz: u64,
    topology: &PlatformTopology,
) -> f64 {
    let spec = topology.cluster(cluster);
    let rel = freq_hz as f64 / topology.reference_frequency_hz() as f64;
    let speed = spec.perf_coefficient
        * kernel.affinity_for(&spec.tag)
        * rel.powf(kernel.frequency_sensitivity)
        * width as f64
        * kernel.efficiency(&spec.tag, width);
    kernel.work_units / speed
}

/// Counters consistent with `time` at `freq_hz`: cycles / time is exactly
/// the frequency and cycles·fpc / (64·misses) is the kernel's AI.
pub fn counters_for(kernel: &KernelSpec, time: f64, freq_hz: u64) -> Counters {
    let cycles = time * freq_hz as f64;
    let ai = kernel.ai_at(freq_hz);
    Counters {
        cycles,
        flops_per_cycle: kernel.flops_per_cycle,
        cache_misses: cycles * kernel.flops_per_cycle / (64.0 * ai),
    }
}

pub fn emit_counters(
    kernel: &KernelSpec,
    cluster: ClusterId,
    width: u32,
    freq_hz: u64,
    topology: &PlatformTopology,
) -> Counters {
    let t = ground_truth_time(kernel, cluster, width, freq_hz, topology);
    counters_for(kernel, t, freq_hz)
}

/// Multiplicative log-normal time noise with median 1.
#[derive(Debug, Clone, Copy)]
pub struct TimeNoise {
    dist: Option<LogNormal<f64>>,
}

impl TimeNoise {
    pub fn new(sigma: f64) -> Self {
        Self { dist: (sigma > 0.0).then(|| LogNormal::new(0.0, sigma).expect("sigma is finite")) }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.dist {
            Some(d) => d.sample(rng),
            None => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::arithmetic_intensity;
    use crate::workload::kernel::{copy, matmul, stencil};

    const MAX: u64 = 2_035_200_000;
    const MIN: u64 = 345_600_000;

    #[test]
    fn identity_on_reference_core() {
        let t = PlatformTopology::tx2();
        let k = matmul();
        assert_eq!(ground_truth_time(&k, 1, 1, MAX, &t), k.work_units);
    }

    #[test]
    fn perfect_scaling_halves_time() {
        let t = PlatformTopology::tx2();
        let k = matmul();
        assert_eq!(ground_truth_time(&k, 0, 2, MAX, &t), k.work_units / 4.0);
    }

    #[test]
    fn counters_reproduce_frequency_and_ai() {
        let t = PlatformTopology::tx2();
        for (k, ai) in [(matmul(), 423.8), (copy(), 2.07), (stencil(), 17.23)] {
            let c = emit_counters(&k, 1, 2, MAX, &t);
            let time = ground_truth_time(&k, 1, 2, MAX, &t);
            assert!((c.cycles / time - MAX as f64).abs() < 1e-3);
            let got = arithmetic_intensity(c.cycles, c.flops_per_cycle, c.cache_misses);
            assert!((got - ai).abs() < 1e-9 * ai, "{} {got}", k.name);
        }
    }

    #[test]
    fn lower_frequency_is_never_faster() {
        let t = PlatformTopology::tx2();
        for k in [matmul(), copy(), stencil()] {
            for c in 0..2 {
                assert!(ground_truth_time(&k, c, 1, MIN, &t) > ground_truth_time(&k, c, 1, MAX, &t));
            }
        }
    }

    #[test]
    fn zero_sigma_is_noise_free() {
        let mut rng = rand::rng();
        assert_eq!(TimeNoise::new(0.0).sample(&mut rng), 1.0);
    }
}
