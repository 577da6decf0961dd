//! Experiment configuration and the run, profile, compare and sweep
//! commands behind the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::SchedulerPolicy;
use crate::engine::{run, BackoffConfig, DvfsSchedule, DvfsStep, SimOptions, SimReport};
use crate::error::SimError;
use crate::metrics::{self, RunSummary};
use crate::platform::{FrequencyState, PlatformTopology, TopologyFile};
use crate::power::{arithmetic_intensity, derive_thresholds, AiThresholds, PowerProfile};
use crate::workload::{self, kernel, TaskDag};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation error: {0}")]
    Sim(#[from] SimError),
    #[error("output error: {0}")]
    Output(String),
}

impl ExperimentError {
    /// 1 for configuration problems, 2 for everything that fails later.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Sim(_) | ExperimentError::Output(_) => 2,
        }
    }
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

fn config_err(key: &str, msg: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(format!("{key}: {msg}"))
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Output(format!("{}: {e}", path.display()))
}

/// Policy and engine knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub ema_weight: f64,
    pub dvfs_detection: bool,
    pub sleep: bool,
    pub pretrain: bool,
    pub backoff_n: u32,
    pub backoff_min_ms: f64,
    pub backoff_max_ms: f64,
    pub steal_cost_us: f64,
    pub map_overhead_us: f64,
    pub sample_period_ms: f64,
    pub record_events: bool,
}

impl Default for PolicyParams {
    fn default() -> Self {
        let o = SimOptions::default();
        Self {
            ema_weight: o.ema_weight,
            dvfs_detection: o.dvfs_detection,
            sleep: o.sleep_enabled,
            pretrain: o.pretrain,
            backoff_n: o.backoff.attempts,
            backoff_min_ms: o.backoff.min_sleep_s * 1e3,
            backoff_max_ms: o.backoff.max_sleep_s * 1e3,
            steal_cost_us: o.steal_cost_s * 1e6,
            map_overhead_us: o.map_overhead_s * 1e6,
            sample_period_ms: o.sample_period_s * 1e3,
            record_events: o.record_events,
        }
    }
}

/// One experiment: a platform, a workload, a policy and how to run it.
///
/// `dag` is a `+`-joined list of kernel presets for the synthetic
/// generator (`matmul`, `copy+stencil`) or `sparselu[:blocks]`. `freq`
/// maps a cluster tag, index or `all` to `MIN`, `MAX`, a level index or a
/// frequency in Hz. `dvfs_schedule` is `random:<lo>,<hi>` in seconds or the
/// path of a step file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name (`tx2`, `sym<N>`) or topology file path.
    pub platform: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    pub policy: SchedulerPolicy,
    pub dag: String,
    pub dop: Vec<u32>,
    pub tasks: usize,
    pub freq: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dvfs_schedule: Option<String>,
    pub seed: u64,
    pub reps: u32,
    pub noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub emit_plot_data: bool,
    pub params: PolicyParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            platform: "tx2".into(),
            profile: None,
            policy: SchedulerPolicy::Erase,
            dag: "matmul".into(),
            dop: vec![4],
            tasks: 10_000,
            freq: BTreeMap::new(),
            dvfs_schedule: None,
            seed: 0,
            reps: 1,
            noise: 0.0,
            out: None,
            emit_plot_data: false,
            params: PolicyParams::default(),
        }
    }
}

/// Workload shape parsed from the `dag` key.
#[derive(Debug, Clone, PartialEq)]
pub enum DagSpec {
    Synthetic(Vec<String>),
    SparseLu { blocks: usize },
}

const DEFAULT_LU_BLOCKS: usize = 16;

impl DagSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("sparselu") {
            let blocks = match rest.strip_prefix(':') {
                None if rest.is_empty() => DEFAULT_LU_BLOCKS,
                Some(n) => n
                    .parse()
                    .ok()
                    .filter(|&b: &usize| b >= 1)
                    .ok_or_else(|| config_err("dag", format!("bad block count '{n}'")))?,
                None => return Err(config_err("dag", format!("unknown workload '{s}'"))),
            };
            return Ok(DagSpec::SparseLu { blocks });
        }
        let names: Vec<String> = s.split('+').map(|k| k.trim().to_string()).collect();
        for n in &names {
            if kernel::preset(n).is_none() {
                return Err(config_err("dag", format!("unknown kernel preset '{n}'")));
            }
        }
        Ok(DagSpec::Synthetic(names))
    }

    /// Label used in output tables.
    pub fn label(&self) -> String {
        match self {
            DagSpec::Synthetic(k) => k.join("+"),
            DagSpec::SparseLu { blocks } => format!("sparselu:{blocks}"),
        }
    }
}

/// Everything a single engine run needs, resolved from a config.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: PlatformTopology,
    pub profile: PowerProfile,
    pub dag_spec: DagSpec,
    pub initial_freq_hz: Vec<u64>,
    pub freq_label: String,
    pub dvfs: DvfsSchedule,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(config_err("reps", "must be >= 1"));
        }
        if self.tasks < 1 {
            return Err(config_err("tasks", "must be >= 1"));
        }
        if self.dop.is_empty() || self.dop.contains(&0) {
            return Err(config_err("dop", "needs at least one value, all >= 1"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(config_err("noise", "must be finite and >= 0"));
        }
        let p = &self.params;
        if !(p.ema_weight > 0.0 && p.ema_weight <= 1.0) {
            return Err(config_err("params.ema_weight", "must be in (0, 1]"));
        }
        if p.backoff_n < 1 {
            return Err(config_err("params.backoff_n", "must be >= 1"));
        }
        if !(p.backoff_min_ms > 0.0 && p.backoff_max_ms >= p.backoff_min_ms) {
            return Err(config_err("params.backoff_min_ms", "need 0 < backoff_min_ms <= backoff_max_ms"));
        }
        if !(p.steal_cost_us > 0.0) {
            return Err(config_err("params.steal_cost_us", "must be > 0"));
        }
        if !(p.map_overhead_us >= 0.0) {
            return Err(config_err("params.map_overhead_us", "must be >= 0"));
        }
        if !(p.sample_period_ms > 0.0) {
            return Err(config_err("params.sample_period_ms", "must be > 0"));
        }
        DagSpec::parse(&self.dag)?;
        Ok(())
    }

    pub fn topology(&self) -> Result<PlatformTopology> {
        if let Some(t) = PlatformTopology::preset(&self.platform) {
            return Ok(t);
        }
        let path = Path::new(&self.platform);
        let text = fs::read_to_string(path)
            .map_err(|e| config_err("platform", format!("not a preset and unreadable as a file: {e}")))?;
        let file: TopologyFile = toml::from_str(&text).map_err(|e| config_err("platform", e))?;
        PlatformTopology::from_file(file).map_err(|e| config_err("platform", e))
    }

    /// Resolves every reference in the config against its platform.
    pub fn scenario(&self) -> Result<Scenario> {
        self.validate()?;
        let topology = self.topology()?;
        let profile = match &self.profile {
            None => PowerProfile::for_topology(&topology),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| config_err("profile", e))?;
                PowerProfile::from_toml(&text).map_err(|e| config_err("profile", e))?
            }
        };
        profile.check_topology(&topology).map_err(|e| config_err("profile", e))?;
        let initial_freq_hz = resolve_freqs(&topology, &self.freq)?;
        let freq_label = freq_label(&topology, &initial_freq_hz);
        let dvfs = match &self.dvfs_schedule {
            None => DvfsSchedule::None,
            Some(s) => parse_dvfs_schedule(s, &topology)?,
        };
        Ok(Scenario { topology, profile, dag_spec: DagSpec::parse(&self.dag)?, initial_freq_hz, freq_label, dvfs })
    }

    pub fn sim_options(&self, scenario: &Scenario, seed: u64) -> SimOptions {
        let p = &self.params;
        SimOptions {
            seed,
            noise_sigma: self.noise,
            dvfs: scenario.dvfs.clone(),
            backoff: BackoffConfig {
                attempts: p.backoff_n,
                min_sleep_s: p.backoff_min_ms * 1e-3,
                max_sleep_s: p.backoff_max_ms * 1e-3,
            },
            sleep_enabled: p.sleep,
            steal_cost_s: p.steal_cost_us * 1e-6,
            map_overhead_s: p.map_overhead_us * 1e-6,
            sample_period_s: p.sample_period_ms * 1e-3,
            initial_freq_hz: Some(scenario.initial_freq_hz.clone()),
            dvfs_detection: p.dvfs_detection,
            ema_weight: p.ema_weight,
            pretrain: p.pretrain,
            record_events: p.record_events,
            record_activity: false,
        }
    }
}

/// Per-cluster start frequencies; unnamed clusters start at their highest
/// level.
pub fn resolve_freqs(topology: &PlatformTopology, freq: &BTreeMap<String, String>) -> Result<Vec<u64>> {
    let mut out = FrequencyState::all_max(topology).as_slice().to_vec();
    let mut apply = |c: usize, key: &str, level: &str| -> Result<()> {
        out[c] = topology.resolve_level(c, level).map_err(|e| config_err(&format!("freq.{key}"), e))?;
        Ok(())
    };
    if let Some(level) = freq.get("all") {
        for c in 0..topology.cluster_count() {
            apply(c, "all", level)?;
        }
    }
    for (key, level) in freq.iter().filter(|(k, _)| k.as_str() != "all") {
        let c = topology
            .cluster_by_tag(key)
            .or_else(|| key.parse::<usize>().ok().filter(|&i| i < topology.cluster_count()))
            .ok_or_else(|| config_err(&format!("freq.{key}"), "no such cluster"))?;
        apply(c, key, level)?;
    }
    Ok(out)
}

/// `MAX`/`MIN` names where they apply, Hz otherwise, joined by `&`.
pub fn freq_label(topology: &PlatformTopology, freqs: &[u64]) -> String {
    freqs
        .iter()
        .enumerate()
        .map(|(c, &f)| {
            let spec = topology.cluster(c);
            if f == spec.max_frequency() {
                "MAX".to_string()
            } else if f == spec.min_frequency() {
                "MIN".to_string()
            } else {
                f.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("&")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    #[serde(default)]
    step: Vec<StepEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepEntry {
    time_s: f64,
    /// Cluster tag or index; every cluster when absent.
    cluster: Option<String>,
    level: String,
}

/// `random:<lo>,<hi>` or the path of a TOML file with `[[step]]` tables
/// holding `time_s`, optional `cluster` and `level`.
pub fn parse_dvfs_schedule(s: &str, topology: &PlatformTopology) -> Result<DvfsSchedule> {
    const KEY: &str = "dvfs_schedule";
    if s == "none" {
        return Ok(DvfsSchedule::None);
    }
    if let Some(rest) = s.strip_prefix("random:") {
        let parts: Vec<f64> = rest
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| config_err(KEY, e))?;
        return match parts[..] {
            [lo, hi] if lo > 0.0 && hi >= lo => Ok(DvfsSchedule::RandomAlternating { min_gap_s: lo, max_gap_s: hi }),
            _ => Err(config_err(KEY, "expected random:<lo>,<hi> with 0 < lo <= hi")),
        };
    }
    let text = fs::read_to_string(s).map_err(|e| config_err(KEY, e))?;
    let file: StepFile = toml::from_str(&text).map_err(|e| config_err(KEY, e))?;
    let mut steps = Vec::with_capacity(file.step.len());
    for (i, e) in file.step.iter().enumerate() {
        let key = format!("{KEY}.step[{i}]");
        if !(e.time_s >= 0.0) {
            return Err(config_err(&key, "time_s must be >= 0"));
        }
        let cluster = match &e.cluster {
            None => None,
            Some(tag) => Some(
                topology
                    .cluster_by_tag(tag)
                    .or_else(|| tag.parse::<usize>().ok().filter(|&c| c < topology.cluster_count()))
                    .ok_or_else(|| config_err(&key, format!("no cluster '{tag}'")))?,
            ),
        };
        let freq_hz = topology.resolve_level(cluster.unwrap_or(0), &e.level).map_err(|err| config_err(&key, err))?;
        steps.push(DvfsStep { time_s: e.time_s, cluster, freq_hz });
    }
    Ok(DvfsSchedule::Explicit(steps))
}

pub fn build_dag(spec: &DagSpec, dop: u32, tasks: usize, seed: u64) -> Result<TaskDag> {
    let dag = match spec {
        DagSpec::Synthetic(names) => {
            let kernels = names.iter().map(|n| kernel::preset(n).expect("validated")).collect();
            workload::generate_synthetic_dag(dop, tasks, kernels, seed)?
        }
        DagSpec::SparseLu { blocks } => workload::generate_blocked_lu(*blocks, kernel::sparselu_kernels())?,
    };
    Ok(dag)
}

/// Seed of repetition `rep`: splitmix64 of the master seed advanced `rep + 1`
/// steps.
pub fn derive_seed(master: u64, rep: u32) -> u64 {
    let mut z = master.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| output_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| output_err(path, e))?;
    tmp.persist(path).map_err(|e| output_err(path, e.error))?;
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> anyhow::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| ExperimentError::Output(e.to_string()))?;
    Ok(buf)
}

/// One simulated cell of an experiment.
#[derive(Debug, Clone)]
pub struct Cell {
    pub policy: SchedulerPolicy,
    pub dop: u32,
    pub rep: u32,
    pub seed: u64,
    pub report: SimReport,
    pub summary: RunSummary,
}

fn run_cell(cfg: &ExperimentConfig, sc: &Scenario, policy: SchedulerPolicy, dop: u32, rep: u32) -> Result<Cell> {
    let seed = derive_seed(cfg.seed, rep);
    let dag = build_dag(&sc.dag_spec, dop, cfg.tasks, cfg.seed)?;
    let opts = cfg.sim_options(sc, seed);
    let report = run(&dag, &sc.topology, &sc.profile, policy, &opts)?;
    let dop_label = match sc.dag_spec {
        DagSpec::Synthetic(_) => dop,
        DagSpec::SparseLu { .. } => dag.dop().round() as u32,
    };
    let summary = RunSummary::from_report(&report, &sc.dag_spec.label(), dop_label, &sc.freq_label);
    Ok(Cell { policy, dop, rep, seed, report, summary })
}

/// The dop values a config actually varies; blocked LU has a fixed shape.
fn dops(cfg: &ExperimentConfig, sc: &Scenario) -> Vec<u32> {
    match sc.dag_spec {
        DagSpec::Synthetic(_) => cfg.dop.clone(),
        DagSpec::SparseLu { .. } => vec![cfg.dop[0]],
    }
}

/// Mean and coefficient of variation over repetitions of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub policy: String,
    pub kernel: String,
    pub dop: u32,
    pub freq: String,
    pub reps: usize,
    pub energy_j_mean: f64,
    pub energy_cv_pct: f64,
    pub makespan_s_mean: f64,
    pub makespan_cv_pct: f64,
    pub edp_js_mean: f64,
    pub edp_cv_pct: f64,
}

fn mean_cv(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 || mean == 0.0 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / mean.abs() * 100.0)
}

pub fn aggregate(rows: &[RunSummary]) -> Aggregate {
    let e: Vec<f64> = rows.iter().map(|r| r.energy_j).collect();
    let t: Vec<f64> = rows.iter().map(|r| r.makespan_s).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.edp_js).collect();
    let ((em, ecv), (tm, tcv), (dm, dcv)) = (mean_cv(&e), mean_cv(&t), mean_cv(&d));
    let first = &rows[0];
    Aggregate {
        policy: first.policy.clone(),
        kernel: first.kernel.clone(),
        dop: first.dop,
        freq: first.freq.clone(),
        reps: rows.len(),
        energy_j_mean: em,
        energy_cv_pct: ecv,
        makespan_s_mean: tm,
        makespan_cv_pct: tcv,
        edp_js_mean: dm,
        edp_cv_pct: dcv,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
}

/// Runs every dop and repetition of `cfg` in parallel. With `out` set,
/// writes `runs.csv`, `aggregate.csv`, one JSON report per run and, when
/// requested, plot data for the first repetition of each dop.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let sc = cfg.scenario()?;
    let jobs: Vec<(u32, u32)> = dops(cfg, &sc).into_iter().flat_map(|d| (0..cfg.reps).map(move |r| (d, r))).collect();
    let cells: Vec<Cell> =
        jobs.par_iter().map(|&(d, r)| run_cell(cfg, &sc, cfg.policy, d, r)).collect::<Result<_>>()?;
    let aggregates: Vec<Aggregate> = dops(cfg, &sc)
        .iter()
        .map(|&d| {
            let rows: Vec<RunSummary> = cells.iter().filter(|c| c.dop == d).map(|c| c.summary.clone()).collect();
            aggregate(&rows)
        })
        .collect();
    if let Some(out) = &cfg.out {
        let rows: Vec<RunSummary> = cells.iter().map(|c| c.summary.clone()).collect();
        write_atomic(&out.join("runs.csv"), &csv_bytes(|b| metrics::write_summaries(b, "runs", &rows))?)?;
        write_atomic(&out.join("aggregate.csv"), &csv_bytes(|b| metrics::write_csv(b, "aggregate", &aggregates))?)?;
        cells.par_iter().try_for_each(|c| {
            let name = format!("report_{}_dop{}_rep{}.json", c.policy, c.dop, c.rep);
            let json = serde_json::to_vec_pretty(&c.report).map_err(|e| ExperimentError::Output(e.to_string()))?;
            write_atomic(&out.join(name), &json)
        })?;
        if cfg.emit_plot_data {
            for c in cells.iter().filter(|c| c.rep == 0) {
                write_plot_data(&out.join(format!("dop{}", c.dop)), &c.report)?;
            }
        }
    }
    Ok(RunOutput { cells, aggregates })
}

/// Task placement, per-core time split and sampled power of one run.
pub fn write_plot_data(dir: &Path, report: &SimReport) -> Result<()> {
    let d = metrics::distributions(report);
    write_atomic(&dir.join("task_distribution.csv"), &csv_bytes(|b| metrics::write_task_distribution(b, &d))?)?;
    write_atomic(&dir.join("time_distribution.csv"), &csv_bytes(|b| metrics::write_time_distribution(b, &d))?)?;
    write_atomic(&dir.join("power_timeline.csv"), &csv_bytes(|b| metrics::write_power_timeline(b, report))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOutput {
    pub profile: PowerProfile,
    pub thresholds: AiThresholds,
    /// Arithmetic intensity measured for each microbenchmark.
    pub measured_ai: Vec<f64>,
}

/// Runs each microbenchmark as a short chain, measures its arithmetic
/// intensity from the simulated counters and derives the classification
/// thresholds. The runtime power cells are taken from the platform's
/// built-in profile.
pub fn cmd_profile(topology: &PlatformTopology, seed: u64) -> Result<ProfileOutput> {
    const TASKS_PER_BENCH: usize = 8;
    let mut profile = PowerProfile::for_topology(topology);
    let mut measured_ai = Vec::with_capacity(kernel::MICROBENCH_AI.len());
    for &ai in &kernel::MICROBENCH_AI {
        let k = kernel::microbench(ai, topology);
        let dag = workload::generate_synthetic_dag(1, TASKS_PER_BENCH, vec![k], seed)?;
        let opts = SimOptions { seed, record_activity: false, ..SimOptions::default() };
        let report = run(&dag, topology, &profile, SchedulerPolicy::Rws, &opts)?;
        let mean = report
            .outcomes
            .iter()
            .map(|o| arithmetic_intensity(o.counters.cycles, o.counters.flops_per_cycle, o.counters.cache_misses))
            .sum::<f64>()
            / report.outcomes.len() as f64;
        measured_ai.push(mean);
    }
    let thresholds = derive_thresholds(&measured_ai)?;
    profile.ai_thresholds = thresholds;
    Ok(ProfileOutput { profile, thresholds, measured_ai })
}

/// One row of a policy comparison, relative to the first config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: String,
    pub energy_j: f64,
    pub makespan_s: f64,
    pub edp_js: f64,
    pub energy_delta_pct: f64,
    pub makespan_delta_pct: f64,
    pub edp_delta_pct: f64,
}

/// Runs configs that differ only in policy and reports mean energy, time
/// and EDP deltas against the first. Writes `compare.csv` when the first
/// config names an output directory.
pub fn cmd_compare(configs: &[ExperimentConfig]) -> Result<Vec<CompareRow>> {
    if configs.len() < 2 {
        return Err(config_err("compare", "needs at least two configs"));
    }
    let workload = |c: &ExperimentConfig| ExperimentConfig {
        policy: SchedulerPolicy::Erase,
        out: None,
        emit_plot_data: false,
        ..c.clone()
    };
    let base = workload(&configs[0]);
    if let Some(i) = configs.iter().position(|c| workload(c) != base) {
        return Err(config_err(
            &format!("compare[{i}]"),
            "workload differs from the first config; only the policy may change",
        ));
    }
    let means: Vec<Aggregate> = configs
        .par_iter()
        .map(|c| {
            let out = cmd_run(&ExperimentConfig { out: None, dop: vec![c.dop[0]], ..c.clone() })?;
            Ok(out.aggregates[0].clone())
        })
        .collect::<Result<_>>()?;
    let delta = |x: f64, x0: f64| if x0 == 0.0 { 0.0 } else { (x / x0 - 1.0) * 100.0 };
    let first = &means[0];
    let rows: Vec<CompareRow> = means
        .iter()
        .map(|a| CompareRow {
            policy: a.policy.clone(),
            energy_j: a.energy_j_mean,
            makespan_s: a.makespan_s_mean,
            edp_js: a.edp_js_mean,
            energy_delta_pct: delta(a.energy_j_mean, first.energy_j_mean),
            makespan_delta_pct: delta(a.makespan_s_mean, first.makespan_s_mean),
            edp_delta_pct: delta(a.edp_js_mean, first.edp_js_mean),
        })
        .collect();
    if let Some(out) = &configs[0].out {
        write_atomic(&out.join("compare.csv"), &csv_bytes(|b| metrics::write_csv(b, "compare", &rows))?)?;
    }
    Ok(rows)
}

/// Default sweep axes.
pub const SWEEP_DOPS: [u32; 4] = [2, 4, 6, 8];

/// Every combination of lowest and highest level across clusters, with the
/// all-highest setting first.
pub fn frequency_permutations(topology: &PlatformTopology) -> Vec<BTreeMap<String, String>> {
    let n = topology.cluster_count();
    (0..1u32 << n)
        .map(|mask| {
            (0..n)
                .map(|c| {
                    let level = if mask >> (n - 1 - c) & 1 == 1 { "MIN" } else { "MAX" };
                    (topology.cluster(c).tag.clone(), level.to_string())
                })
                .collect()
        })
        .collect()
}

/// Sweep row with energy, time and EDP normalized to the RWS cell of the
/// same dop and frequency setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dop: u32,
    pub freq: String,
    pub policy: String,
    pub energy_norm: f64,
    pub makespan_norm: f64,
    pub edp_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<Aggregate>,
    pub points: Vec<SweepPoint>,
    /// Policies left out because the platform cannot host them.
    pub skipped: Vec<String>,
}

/// dop × distinct frequency permutation × policy grid, with repetitions
/// averaged.
/// The config's `dop` list replaces the default axis when it has more than
/// one value; its `freq` and `policy` are ignored.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    let topology = cfg.topology()?;
    let dops: Vec<u32> = if cfg.dop.len() > 1 { cfg.dop.clone() } else { SWEEP_DOPS.to_vec() };
    let mut skipped = Vec::new();
    let policies: Vec<SchedulerPolicy> = SchedulerPolicy::ALL
        .into_iter()
        .filter(|&p| {
            let ok = p != SchedulerPolicy::Cats || topology.cluster_count() >= 2;
            if !ok {
                skipped.push(p.name().to_string());
            }
            ok
        })
        .collect();
    let mut seen = Vec::new();
    let mut freqs = Vec::new();
    for f in frequency_permutations(&topology) {
        let hz = resolve_freqs(&topology, &f)?;
        if !seen.contains(&hz) {
            seen.push(hz);
            freqs.push(f);
        }
    }
    let mut grid = Vec::new();
    for &d in &dops {
        for f in &freqs {
            for &p in &policies {
                grid.push(ExperimentConfig {
                    policy: p,
                    dop: vec![d],
                    freq: f.clone(),
                    out: None,
                    emit_plot_data: false,
                    ..cfg.clone()
                });
            }
        }
    }
    let rows: Vec<Aggregate> = grid.par_iter().map(|c| Ok(cmd_run(c)?.aggregates.remove(0))).collect::<Result<_>>()?;
    let points = rows
        .iter()
        .map(|a| {
            let base = rows
                .iter()
                .find(|b| b.dop == a.dop && b.freq == a.freq && b.policy == SchedulerPolicy::Rws.name())
                .expect("rws runs on every platform");
            SweepPoint {
                dop: a.dop,
                freq: a.freq.clone(),
                policy: a.policy.clone(),
                energy_norm: a.energy_j_mean / base.energy_j_mean,
                makespan_norm: a.makespan_s_mean / base.makespan_s_mean,
                edp_norm: a.edp_js_mean / base.edp_js_mean,
            }
        })
        .collect();
    let out = SweepOutput { rows, points, skipped };
    if let Some(dir) = &cfg.out {
        write_atomic(&dir.join("sweep.csv"), &csv_bytes(|b| metrics::write_csv(b, "sweep", &out.rows))?)?;
        if cfg.emit_plot_data {
            write_atomic(
                &dir.join("energy_time_sweep.csv"),
                &csv_bytes(|b| metrics::write_csv(b, "energy_time_sweep", &out.points))?,
            )?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dag_spec_parsing() {
        assert_eq!(DagSpec::parse("matmul").unwrap(), DagSpec::Synthetic(vec!["matmul".into()]));
        assert_eq!(DagSpec::parse("copy+stencil").unwrap(), DagSpec::Synthetic(vec!["copy".into(), "stencil".into()]));
        assert_eq!(DagSpec::parse("sparselu").unwrap(), DagSpec::SparseLu { blocks: 16 });
        assert_eq!(DagSpec::parse("sparselu:4").unwrap(), DagSpec::SparseLu { blocks: 4 });
        assert!(DagSpec::parse("sparselux").is_err());
        assert!(DagSpec::parse("fft").is_err());
    }

    #[test]
    fn frequency_keys_resolve() {
        let t = PlatformTopology::tx2();
        let mut f = BTreeMap::new();
        f.insert("all".to_string(), "MIN".to_string());
        f.insert("denver".to_string(), "11".to_string());
        let hz = resolve_freqs(&t, &f).unwrap();
        assert_eq!(hz, vec![2_035_200_000, 345_600_000]);
        assert_eq!(freq_label(&t, &hz), "MAX&MIN");
        f.insert("big".to_string(), "MAX".to_string());
        let e = resolve_freqs(&t, &f).unwrap_err();
        assert!(e.to_string().contains("freq.big"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn random_dvfs_spec() {
        let t = PlatformTopology::tx2();
        assert_eq!(
            parse_dvfs_schedule("random:3,12", &t).unwrap(),
            DvfsSchedule::RandomAlternating { min_gap_s: 3.0, max_gap_s: 12.0 }
        );
        assert!(parse_dvfs_schedule("random:5,1", &t).is_err());
    }

    #[test]
    fn four_permutations_on_two_clusters() {
        let p = frequency_permutations(&PlatformTopology::tx2());
        let labels: Vec<String> = p.iter().map(|m| format!("{}&{}", m["denver"], m["a57"])).collect();
        assert_eq!(labels, ["MAX&MAX", "MAX&MIN", "MIN&MAX", "MIN&MIN"]);
        assert_eq!(frequency_permutations(&PlatformTopology::symmetric(4)).len(), 2);
    }

    #[test]
    fn seeds_differ_per_repetition() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn validation_names_the_key() {
        let c = ExperimentConfig { reps: 0, ..ExperimentConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("reps"));
        let e = ExperimentConfig::from_toml("tasks = 10\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }
}
