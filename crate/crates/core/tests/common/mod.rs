#![allow(dead_code)]

use std::collections::BTreeMap;

use erase_sim::baselines::SchedulerPolicy;
use erase_sim::engine::{run, SimOptions, SimReport};
use erase_sim::platform::PlatformTopology;
use erase_sim::power::PowerProfile;
use erase_sim::workload::{AiPoint, KernelSpec, Scaling, TaskDag};

/// Runs a simulation and checks that billed energy closes against the
/// integrated power timeline.
pub fn sim(
    dag: &TaskDag,
    topology: &PlatformTopology,
    profile: &PowerProfile,
    policy: SchedulerPolicy,
    opts: &SimOptions,
) -> SimReport {
    let r = run(dag, topology, profile, policy, opts).expect("simulation runs");
    assert_closure(&r);
    r
}

pub fn assert_closure(r: &SimReport) {
    let integral = r.integrate_energy();
    let billed = r.task_energy_mj + r.idle_gap_energy_mj;
    let scale = integral.abs().max(1e-12);
    assert!(
        ((billed - integral) / scale).abs() <= 1e-6,
        "billed {billed} mJ vs integrated {integral} mJ ({} {})",
        r.policy,
        r.platform
    );
    assert!(((r.total_energy_mj - integral) / scale).abs() <= 1e-6);
}

pub fn quiet() -> SimOptions {
    SimOptions { record_activity: false, ..SimOptions::default() }
}

/// Flat-AI kernel with an efficiency table applied to every cluster.
pub fn kernel(name: &str, work_units: f64, ai: f64, efficiency: &[f64]) -> KernelSpec {
    KernelSpec {
        name: name.into(),
        work_units,
        frequency_sensitivity: 1.0,
        flops_per_cycle: 1.0,
        ai_curve: vec![AiPoint { freq_hz: 1, ai }],
        scaling: BTreeMap::new(),
        default_scaling: Scaling::Table { efficiency: efficiency.to_vec() },
        cluster_affinity: BTreeMap::new(),
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    ((a - b) / b.abs().max(1e-300)).abs() <= tol
}

use erase_sim::activity::{CoreStatus, CoreStatusBoard};
use erase_sim::mapper::MapInputs;
use erase_sim::perf::PerfModel;
use erase_sim::platform::{ClusterSpec, FrequencyState};
use erase_sim::power::{AiThresholds, TaskType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random mapper input with the raw numbers it was built from, so an
/// oracle can recompute energies without the library's lookups.
#[derive(Clone)]
pub struct MapperFixture {
    pub topology: PlatformTopology,
    pub profile: PowerProfile,
    pub perf: PerfModel,
    pub board: CoreStatusBoard,
    pub task_type: TaskType,
    /// Seconds per (cluster, width).
    pub times: BTreeMap<(usize, u32), f64>,
    /// Runtime mW of `task_type` per (cluster, width).
    pub runtime: BTreeMap<(usize, u32), f64>,
}

impl MapperFixture {
    pub fn inputs(&self) -> MapInputs<'_> {
        MapInputs { topology: &self.topology, board: &self.board, perf: &self.perf, profile: &self.profile }
    }

    /// Same fixture with the table retrained on `times`.
    pub fn with_times(&self, times: BTreeMap<(usize, u32), f64>) -> Self {
        let mut g = self.clone();
        let mut table = erase_sim::perf::PerformanceTable::new(0, &g.topology);
        for (&(c, w), &t) in &times {
            table.update(c, w, t, 0.5).unwrap();
        }
        *g.perf.table(0) = table;
        g.times = times;
        g
    }

    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // A quarter of the fixtures draw from a coarse grid to force ties.
        let coarse = rng.random_bool(0.25);
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            if coarse {
                lo + (hi - lo) * rng.random_range(0..4) as f64 / 4.0
            } else {
                rng.random_range(lo..hi)
            }
        };
        let levels = [800_000_000u64, 1_400_000_000, 2_000_000_000];
        let n_clusters = rng.random_range(1..=4);
        let clusters: Vec<ClusterSpec> = (0..n_clusters)
            .map(|i| ClusterSpec {
                tag: format!("c{i}"),
                core_count: rng.random_range(1..=16),
                frequency_levels_hz: vec![levels[rng.random_range(0..levels.len())]],
                perf_coefficient: rng.random_range(0.5..3.0),
            })
            .collect();
        let topology = PlatformTopology::new("fixture", 2_000_000_000, clusters).unwrap();
        let idle: Vec<f64> = (0..n_clusters).map(|_| draw(&mut rng, 10.0, 2000.0)).collect();
        let mut profile = PowerProfile::new(
            "fixture",
            topology.clusters().iter().map(|c| c.tag.clone()).collect(),
            idle.iter().sum(),
            idle,
            AiThresholds { low: 5.0, high: 20.0 },
        );
        let task_type = TaskType::ALL[rng.random_range(0..3)];
        let mut perf = PerfModel::new(&topology, &FrequencyState::all_max(&topology), 0.5, true);
        let mut times = BTreeMap::new();
        let mut runtime = BTreeMap::new();
        for c in 0..n_clusters {
            let f = topology.cluster(c).max_frequency();
            for t in TaskType::ALL {
                let mut p = 0.0;
                for w in topology.cluster(c).widths() {
                    p += draw(&mut rng, 50.0, 1500.0) + 1.0;
                    profile.set_runtime(t, c, f, w, p);
                    if t == task_type {
                        runtime.insert((c, w), p);
                    }
                }
            }
            perf.record_type(0, f, task_type);
            for w in topology.cluster(c).widths() {
                let s = draw(&mut rng, 1e-4, 5e-2) + 1e-5;
                perf.update(0, c, w, s).unwrap();
                times.insert((c, w), s);
            }
        }
        profile.validate().unwrap();
        let status = (0..topology.total_cores())
            .map(|_| if rng.random_bool(0.6) { CoreStatus::Active } else { CoreStatus::Sleep })
            .collect();
        let board = CoreStatusBoard::from_statuses(&topology, status);
        MapperFixture { topology, profile, perf, board, task_type, times, runtime }
    }
}

/// Brute-force argmin of `(idle share + runtime) · time` over the given
/// leaders, one per configuration. Returns (index, energy mJ).
pub fn oracle_argmin(f: &MapperFixture, places: &[erase_sim::platform::ExecutionPlace]) -> (usize, f64) {
    let topo = &f.topology;
    let active = |core: usize| f.board.status(core) == CoreStatus::Active;
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in places.iter().enumerate() {
        let c = p.cluster;
        let awake_here = topo.cores_of(c).filter(|&k| active(k)).count();
        let woken = (p.leader..p.leader + p.width as usize).filter(|&k| !active(k)).count();
        let awake_elsewhere = (0..topo.total_cores()).any(|k| topo.cluster_of(k) != c && active(k));
        let base = if awake_elsewhere { f.profile.idle_power_cluster_mw[c] } else { f.profile.idle_power_chip_mw };
        let share = base * p.width as f64 / (awake_here + woken) as f64;
        let e = (share + f.runtime[&(c, p.width)]) * f.times[&(c, p.width)];
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((i, e));
        }
    }
    best.expect("at least one configuration")
}

pub fn fixture_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}
