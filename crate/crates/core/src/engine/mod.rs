//! Deterministic discrete-event engine: per-core work and assembly queues,
//! stealing, moldable shares, back-off sleep, DVFS injection and exact
//! energy integration.

mod events;
mod report;

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use report::{
    integrate_energy, sample_power, ActivitySegment, CoreMode, CoreTimes, DecisionKind, DetectionRecord, DvfsRecord,
    EventRecord, PlaceCount, PowerSample, PowerSegment, SimReport, SleepRecord, TaskOutcome, TrainingRecord,
};

use events::{EventKind, EventQueue};

use crate::activity::CoreStatusBoard;
use crate::baselines::{calc_place, cats_place, fast_cluster, rws_place, SchedulerPolicy};
use crate::error::{Result, SimError};
use crate::mapper::{map_task, predicted_vs_actual_log, EnergyEstimate, MapDecision, MapInputs};
use crate::perf::{random_place, PerfModel, TableDump, TrainingSlot};
use crate::platform::{ClusterId, CoreId, ExecutionPlace, FrequencyState, PlatformTopology};
use crate::power::{arithmetic_intensity, PowerProfile};
use crate::workload::{counters_for, ground_truth_time, Counters, TaskDag, TaskId, TimeNoise};

/// Capped exponential back-off: after `attempts` failed steals a core
/// sleeps `min(min_sleep_s · 2^k, max_sleep_s)` for the k-th consecutive time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffConfig {
    pub attempts: u32,
    pub min_sleep_s: f64,
    pub max_sleep_s: f64,
}

impl Default for BackoffConfig {
    fn default() -> Self {
        Self { attempts: 100, min_sleep_s: 1e-3, max_sleep_s: 64e-3 }
    }
}

impl BackoffConfig {
    pub fn sleep_duration(&self, backoff_param: u32) -> f64 {
        let factor = 2f64.powi(backoff_param.min(1023) as i32);
        (self.min_sleep_s * factor).min(self.max_sleep_s)
    }
}

/// One externally imposed frequency change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvfsStep {
    pub time_s: f64,
    /// `None` changes every cluster.
    pub cluster: Option<ClusterId>,
    pub freq_hz: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum DvfsSchedule {
    #[default]
    None,
    Explicit(Vec<DvfsStep>),
    /// Every cluster toggles between its highest and lowest level after
    /// uniformly drawn gaps.
    RandomAlternating {
        min_gap_s: f64,
        max_gap_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub seed: u64,
    /// Log-normal sigma of per-task time noise; 0 disables noise.
    pub noise_sigma: f64,
    pub dvfs: DvfsSchedule,
    pub backoff: BackoffConfig,
    pub sleep_enabled: bool,
    /// Duration of one failed steal attempt.
    pub steal_cost_s: f64,
    /// Scheduling time per mapped task.
    pub map_overhead_s: f64,
    pub sample_period_s: f64,
    /// Per-cluster start frequency; all clusters at their highest level when unset.
    pub initial_freq_hz: Option<Vec<u64>>,
    pub dvfs_detection: bool,
    pub ema_weight: f64,
    /// Seed every performance table with exact times before the run.
    pub pretrain: bool,
    pub record_events: bool,
    pub record_activity: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_sigma: 0.0,
            dvfs: DvfsSchedule::None,
            backoff: BackoffConfig::default(),
            sleep_enabled: true,
            steal_cost_s: 1e-6,
            map_overhead_s: 2e-6,
            sample_period_s: 5e-3,
            initial_freq_hz: None,
            dvfs_detection: true,
            ema_weight: 0.5,
            pretrain: false,
            record_events: false,
            record_activity: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Share {
    task: TaskId,
    leader: bool,
}

#[derive(Debug, Clone, Copy)]
struct RunningShare {
    task: TaskId,
    power_mw: f64,
}

#[derive(Debug)]
struct CoreState {
    cluster: ClusterId,
    wq: VecDeque<TaskId>,
    aq: VecDeque<Share>,
    idle_tries: u32,
    backoff_param: u32,
    mode: CoreMode,
    mode_since: f64,
    running: Option<RunningShare>,
    times: CoreTimes,
    victims: Vec<CoreId>,
}

#[derive(Debug, Clone)]
struct TaskState {
    deps_left: usize,
    released_by: CoreId,
    released_at: f64,
    decision: DecisionKind,
    deferrals: u32,
    mapped: Option<ExecutionPlace>,
    place: Option<ExecutionPlace>,
    stealable: bool,
    stolen: bool,
    estimate: Option<EnergyEstimate>,
    alternatives: Vec<f64>,
    noise: f64,
    shares_left: u32,
    dispatched_at: f64,
    leader_start: f64,
    leader_finish: f64,
    finished_at: f64,
    completed_by: CoreId,
    leader_freq: u64,
    counters: Counters,
    billed_mj: f64,
}

impl TaskState {
    fn new(deps: usize) -> Self {
        Self {
            deps_left: deps,
            released_by: 0,
            released_at: f64::NAN,
            decision: DecisionKind::Policy,
            deferrals: 0,
            mapped: None,
            place: None,
            stealable: true,
            stolen: false,
            estimate: None,
            alternatives: Vec::new(),
            noise: 1.0,
            shares_left: 0,
            dispatched_at: f64::NAN,
            leader_start: f64::NAN,
            leader_finish: f64::NAN,
            finished_at: f64::NAN,
            completed_by: 0,
            leader_freq: 0,
            counters: Counters { cycles: 0.0, flops_per_cycle: 0.0, cache_misses: 0.0 },
            billed_mj: 0.0,
        }
    }
}

struct Engine<'a> {
    dag: &'a TaskDag,
    topology: &'a PlatformTopology,
    profile: &'a PowerProfile,
    policy: SchedulerPolicy,
    opts: &'a SimOptions,
    queue: EventQueue,
    now: f64,
    freqs: FrequencyState,
    board: CoreStatusBoard,
    perf: PerfModel,
    cores: Vec<CoreState>,
    tasks: Vec<TaskState>,
    deferred: BTreeMap<usize, Vec<TaskId>>,
    completed: usize,
    in_wq: usize,
    in_aq: usize,
    running: usize,
    rng_steal: ChaCha8Rng,
    rng_map: ChaCha8Rng,
    rng_noise: ChaCha8Rng,
    rng_dvfs: ChaCha8Rng,
    noise: TimeNoise,
    cats_fast: Option<ClusterId>,
    total_mj: f64,
    gap_mj: f64,
    timeline: Vec<PowerSegment>,
    sleeps: Vec<SleepRecord>,
    dvfs_log: Vec<DvfsRecord>,
    detections: Vec<DetectionRecord>,
    trainings: Vec<TrainingRecord>,
    activity: Vec<ActivitySegment>,
    events: Vec<EventRecord>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Executes `dag` to completion under `policy`.
pub fn run(
    dag: &TaskDag,
    topology: &PlatformTopology,
    profile: &PowerProfile,
    policy: SchedulerPolicy,
    opts: &SimOptions,
) -> Result<SimReport> {
    let mut e = Engine::new(dag, topology, profile, policy, opts)?;
    e.start()?;
    e.main_loop()?;
    Ok(e.finish())
}

impl<'a> Engine<'a> {
    fn new(
        dag: &'a TaskDag,
        topology: &'a PlatformTopology,
        profile: &'a PowerProfile,
        policy: SchedulerPolicy,
        opts: &'a SimOptions,
    ) -> Result<Self> {
        profile.validate()?;
        profile.check_topology(topology)?;
        for k in &dag.kernels {
            k.validate(topology)?;
        }
        if dag.is_empty() {
            return Err(SimError::InvalidDag("no tasks".into()));
        }
        if opts.backoff.attempts == 0
            || !(opts.backoff.min_sleep_s > 0.0)
            || opts.backoff.max_sleep_s < opts.backoff.min_sleep_s
        {
            return Err(SimError::InvalidTopology("back-off needs attempts >= 1 and 0 < min <= max".into()));
        }
        if !(opts.steal_cost_s > 0.0) || !(opts.map_overhead_s >= 0.0) || !(opts.noise_sigma >= 0.0) {
            return Err(SimError::InvalidTopology(
                "steal cost must be positive; overhead and noise non-negative".into(),
            ));
        }
        let freqs = match &opts.initial_freq_hz {
            Some(f) => FrequencyState::new(topology, f.clone())?,
            None => FrequencyState::all_max(topology),
        };
        let cats_fast = match policy {
            SchedulerPolicy::Cats => Some(fast_cluster(topology, &freqs)?),
            _ => None,
        };
        let mut cores: Vec<CoreState> = (0..topology.total_cores())
            .map(|c| CoreState {
                cluster: topology.cluster_of(c),
                wq: VecDeque::new(),
                aq: VecDeque::new(),
                idle_tries: 0,
                backoff_param: 0,
                mode: CoreMode::Stealing,
                mode_since: 0.0,
                running: None,
                times: CoreTimes { task_s: 0.0, sleep_s: 0.0, steal_s: 0.0, scheduling_s: 0.0 },
                victims: Vec::new(),
            })
            .collect();
        for (thief, core) in cores.iter_mut().enumerate() {
            core.victims =
                (0..topology.total_cores()).filter(|&v| policy.may_steal(topology, cats_fast, thief, v)).collect();
        }
        let mut perf = PerfModel::new(topology, &freqs, opts.ema_weight, opts.dvfs_detection);
        if opts.pretrain && policy.uses_models() {
            for (k, kernel) in dag.kernels.iter().enumerate() {
                for cfg in topology.enumerate_places() {
                    let f = freqs.get(cfg.cluster);
                    let t = ground_truth_time(kernel, cfg.cluster, cfg.width, f, topology);
                    perf.update(k, cfg.cluster, cfg.width, t)?;
                    perf.record_type(k, f, profile.classify(kernel.ai_at(f)));
                }
            }
        }
        Ok(Self {
            dag,
            topology,
            profile,
            policy,
            opts,
            queue: EventQueue::default(),
            now: 0.0,
            board: CoreStatusBoard::new(topology),
            perf,
            cores,
            tasks: dag.dependency_counts().into_iter().map(TaskState::new).collect(),
            deferred: BTreeMap::new(),
            completed: 0,
            in_wq: 0,
            in_aq: 0,
            running: 0,
            rng_steal: stream(opts.seed, 1),
            rng_map: stream(opts.seed, 2),
            rng_noise: stream(opts.seed, 3),
            rng_dvfs: stream(opts.seed, 4),
            noise: TimeNoise::new(opts.noise_sigma),
            cats_fast,
            freqs,
            total_mj: 0.0,
            gap_mj: 0.0,
            timeline: Vec::new(),
            sleeps: Vec::new(),
            dvfs_log: Vec::new(),
            detections: Vec::new(),
            trainings: Vec::new(),
            activity: Vec::new(),
            events: Vec::new(),
        })
    }

    fn log(&mut self, core: CoreId, kind: &str, task: Option<TaskId>, detail: impl FnOnce() -> String) {
        if self.opts.record_events {
            self.events.push(EventRecord { time: self.now, core, kind: kind.to_string(), task, detail: detail() });
        }
    }

    fn start(&mut self) -> Result<()> {
        match &self.opts.dvfs {
            DvfsSchedule::None => {}
            DvfsSchedule::Explicit(steps) => {
                for (i, s) in steps.iter().enumerate() {
                    self.queue.push(s.time_s, EventKind::DvfsChange, i);
                }
            }
            DvfsSchedule::RandomAlternating { min_gap_s, max_gap_s } => {
                if !(*min_gap_s > 0.0 && max_gap_s >= min_gap_s) {
                    return Err(SimError::InvalidTopology("DVFS gaps need 0 < min <= max".into()));
                }
                let gap = self.rng_dvfs.random_range(*min_gap_s..=*max_gap_s);
                self.queue.push(gap, EventKind::DvfsChange, 0);
            }
        }
        let roots = self.dag.roots.clone();
        let k = roots.len();
        for r in roots {
            self.release(0, r)?;
        }
        self.finish_mapping(0, k);
        for c in 1..self.cores.len() {
            self.queue.push(0.0, EventKind::Step, c);
        }
        Ok(())
    }

    fn main_loop(&mut self) -> Result<()> {
        while self.completed < self.tasks.len() {
            let ev = self.queue.pop().ok_or_else(|| self.deadlock())?;
            self.advance(ev.time)?;
            match ev.kind {
                EventKind::DvfsChange => self.dvfs_change(ev.core)?,
                EventKind::ShareFinish => self.share_finish(ev.core)?,
                EventKind::SleepEnd => {
                    self.set_mode(ev.core, CoreMode::Stealing);
                    self.log(ev.core, "wake", None, String::new);
                    self.step(ev.core)?;
                }
                EventKind::Step => {
                    self.set_mode(ev.core, CoreMode::Stealing);
                    self.step(ev.core)?;
                }
            }
            if self.completed < self.tasks.len()
                && self.in_wq == 0
                && self.in_aq == 0
                && self.running == 0
                && !self.cores.iter().any(|c| c.mode == CoreMode::Scheduling)
            {
                return Err(self.deadlock());
            }
        }
        Ok(())
    }

    fn deadlock(&self) -> SimError {
        let released = self.tasks.iter().filter(|t| !t.released_at.is_nan()).count();
        let deferred: usize = self.deferred.values().map(Vec::len).sum();
        SimError::Deadlock {
            time: self.now,
            unfinished: self.tasks.len() - self.completed,
            snapshot: format!(
                "released={released} completed={} wq={} aq={} running={} deferred={deferred} modes={:?}",
                self.completed,
                self.in_wq,
                self.in_aq,
                self.running,
                self.cores.iter().map(|c| c.mode).collect::<Vec<_>>()
            ),
        }
    }

    /// Integrates power over [now, t) and bills it.
    fn advance(&mut self, t: f64) -> Result<()> {
        let dt = t - self.now;
        let awake = self.cores.iter().any(|c| c.mode != CoreMode::Sleeping);
        if dt > 0.0 && !awake {
            self.push_segment(t, 0.0);
        } else if dt > 0.0 {
            let n_clusters = self.topology.cluster_count();
            let mut per_cluster = vec![0usize; n_clusters];
            for c in &self.cores {
                if c.running.is_some() {
                    per_cluster[c.cluster] += 1;
                }
            }
            let total_running: usize = per_cluster.iter().sum();
            let mut pool = 0.0;
            let mut cluster_share = vec![0.0; n_clusters];
            for cl in 0..n_clusters {
                let idle = self.profile.idle_cluster(cl);
                if per_cluster[cl] > 0 {
                    cluster_share[cl] = idle / per_cluster[cl] as f64;
                } else if self.board.count_active(cl) == 0 {
                    pool += idle;
                } else {
                    self.gap_mj += idle * dt;
                }
            }
            let pooled = if total_running > 0 {
                pool / total_running as f64
            } else {
                self.gap_mj += pool * dt;
                0.0
            };
            let mut power = self.profile.idle_power_chip_mw;
            for c in &self.cores {
                match (c.mode, c.running) {
                    (_, Some(r)) => {
                        power += r.power_mw;
                        self.tasks[r.task].billed_mj += (r.power_mw + cluster_share[c.cluster] + pooled) * dt;
                    }
                    (CoreMode::Stealing | CoreMode::Scheduling, None) => {
                        let spin = self.profile.spin_power(c.cluster, self.freqs.get(c.cluster));
                        power += spin;
                        self.gap_mj += spin * dt;
                    }
                    _ => {}
                }
            }
            self.total_mj += power * dt;
            self.push_segment(t, power);
        } else if dt < 0.0 {
            return Err(SimError::InvalidTopology(format!("time went backwards: {} -> {t}", self.now)));
        }
        self.now = t;
        Ok(())
    }

    fn push_segment(&mut self, t: f64, power: f64) {
        match self.timeline.last_mut() {
            Some(last) if last.power_mw == power && last.end == self.now => last.end = t,
            _ => self.timeline.push(PowerSegment { start: self.now, end: t, power_mw: power }),
        }
    }

    fn set_mode(&mut self, core: CoreId, mode: CoreMode) {
        if self.cores[core].mode != mode {
            self.close_interval(core);
            self.cores[core].mode = mode;
        }
    }

    /// Books the time since the last mode change to the current mode.
    fn close_interval(&mut self, core: CoreId) {
        let now = self.now;
        let c = &mut self.cores[core];
        let dt = now - c.mode_since;
        match c.mode {
            CoreMode::Running => c.times.task_s += dt,
            CoreMode::Sleeping => c.times.sleep_s += dt,
            CoreMode::Stealing => c.times.steal_s += dt,
            CoreMode::Scheduling => c.times.scheduling_s += dt,
        }
        if self.opts.record_activity && dt > 0.0 {
            self.activity.push(ActivitySegment { core, start: c.mode_since, end: now, mode: c.mode });
        }
        c.mode_since = now;
    }

    fn found_work(&mut self, core: CoreId) {
        self.board.set_active(core, self.now);
        let c = &mut self.cores[core];
        c.idle_tries = 0;
        c.backoff_param = 0;
    }

    fn step(&mut self, core: CoreId) -> Result<()> {
        loop {
            if let Some(share) = self.cores[core].aq.pop_front() {
                self.in_aq -= 1;
                self.found_work(core);
                return self.start_share(core, share);
            }
            if let Some(t) = self.cores[core].wq.pop_back() {
                self.in_wq -= 1;
                self.found_work(core);
                self.dispatch(core, t);
                continue;
            }
            break;
        }
        if let Some(t) = self.try_steal(core) {
            self.found_work(core);
            self.dispatch(core, t);
            let share = self.cores[core].aq.pop_front().expect("dispatch fills the thief's AQ");
            self.in_aq -= 1;
            return self.start_share(core, share);
        }
        let attempts = self.opts.backoff.attempts;
        let c = &mut self.cores[core];
        c.idle_tries += 1;
        if self.opts.sleep_enabled && c.idle_tries >= attempts {
            let d = self.opts.backoff.sleep_duration(c.backoff_param);
            c.backoff_param += 1;
            c.idle_tries = 0;
            self.board.set_sleep(core, self.now);
            self.set_mode(core, CoreMode::Sleeping);
            self.sleeps.push(SleepRecord { core, start: self.now, duration: d });
            self.log(core, "sleep", None, || format!("{d:.6}"));
            self.queue.push(self.now + d, EventKind::SleepEnd, core);
        } else {
            self.queue.push(self.now + self.opts.steal_cost_s, EventKind::Step, core);
        }
        Ok(())
    }

    fn try_steal(&mut self, thief: CoreId) -> Option<TaskId> {
        let n = self.cores[thief].victims.len();
        if n == 0 {
            return None;
        }
        let victim = self.cores[thief].victims[self.rng_steal.random_range(0..n)];
        let &task = self.cores[victim].wq.back()?;
        if !self.tasks[task].stealable {
            return None;
        }
        let width = self.tasks[task].place.expect("queued tasks are placed").width;
        let place = self.topology.anchored_place(thief, width).ok()?;
        self.cores[victim].wq.pop_back();
        self.in_wq -= 1;
        let t = &mut self.tasks[task];
        t.place = Some(place);
        t.stolen = true;
        self.log(thief, "steal", Some(task), || format!("victim={victim} leader={} width={width}", place.leader));
        Some(task)
    }

    fn dispatch(&mut self, core: CoreId, task: TaskId) {
        let noise = self.noise.sample(&mut self.rng_noise);
        let t = &mut self.tasks[task];
        let place = t.place.expect("queued tasks are placed");
        t.noise = noise;
        t.shares_left = place.width;
        t.dispatched_at = self.now;
        for c in place.cores() {
            self.cores[c].aq.push_back(Share { task, leader: c == place.leader });
            self.in_aq += 1;
        }
        self.log(core, "dispatch", Some(task), || format!("leader={} width={}", place.leader, place.width));
    }

    fn start_share(&mut self, core: CoreId, share: Share) -> Result<()> {
        let t = &self.tasks[share.task];
        let place = t.place.expect("dispatched tasks are placed");
        let kernel = &self.dag.kernels[self.dag.nodes[share.task].kernel];
        let cluster = self.cores[core].cluster;
        let f = self.freqs.get(cluster);
        let duration = ground_truth_time(kernel, cluster, place.width, f, self.topology) * t.noise;
        let task_type = self.profile.classify(kernel.ai_at(f));
        let power = self.profile.lookup_power(task_type, cluster, f, place.width)? / place.width as f64;
        let now = self.now;
        if share.leader {
            let t = &mut self.tasks[share.task];
            t.leader_start = now;
            t.leader_freq = f;
            t.counters = counters_for(kernel, duration, f);
        }
        self.cores[core].running = Some(RunningShare { task: share.task, power_mw: power });
        self.running += 1;
        self.set_mode(core, CoreMode::Running);
        self.log(core, "share_start", Some(share.task), || format!("leader={} dur={duration:.9}", share.leader));
        self.queue.push(now + duration, EventKind::ShareFinish, core);
        Ok(())
    }

    fn share_finish(&mut self, core: CoreId) -> Result<()> {
        let r = self.cores[core].running.take().expect("finishing core runs a share");
        self.running -= 1;
        self.set_mode(core, CoreMode::Stealing);
        let task = r.task;
        let place = self.tasks[task].place.expect("running tasks are placed");
        self.tasks[task].shares_left -= 1;
        self.log(core, "share_finish", Some(task), String::new);
        let mut mapped = 0;
        if core == place.leader {
            self.tasks[task].leader_finish = self.now;
            if self.policy.uses_models() {
                mapped += self.learn(core, task, place)?;
            }
        }
        if self.tasks[task].shares_left == 0 {
            let now = self.now;
            let t = &mut self.tasks[task];
            t.finished_at = now;
            t.completed_by = core;
            self.completed += 1;
            self.log(core, "complete", Some(task), String::new);
            let mut succ = self.dag.nodes[task].successors.clone();
            succ.sort_unstable();
            for s in succ {
                self.tasks[s].deps_left -= 1;
                if self.tasks[s].deps_left == 0 {
                    self.release(core, s)?;
                    mapped += 1;
                }
            }
        }
        self.finish_mapping(core, mapped);
        Ok(())
    }

    /// Leader-side model maintenance. Returns the number of re-mapped tasks.
    fn learn(&mut self, core: CoreId, task: TaskId, place: ExecutionPlace) -> Result<usize> {
        let kernel = self.dag.nodes[task].kernel;
        let c = place.cluster;
        let t = &self.tasks[task];
        let (start, observed, counters) = (t.leader_start, t.leader_finish - t.leader_start, t.counters);
        let before = self.perf.observed_frequency(c);
        if self.perf.reports_current_frequency(c, start)
            && self.perf.observe_frequency(c, counters.cycles, observed, self.now)
        {
            let to = self.perf.observed_frequency(c);
            self.detections.push(DetectionRecord { time: self.now, cluster: c, task, from_hz: before, to_hz: to });
            self.log(core, "detect", Some(task), || format!("cluster={c} {before}->{to}"));
            let kernels: Vec<usize> = self.deferred.keys().copied().collect();
            let mut n = 0;
            for k in kernels {
                n += self.remap_deferred(core, k)?;
            }
            return Ok(n);
        }
        if self.perf.is_stale(start) {
            self.perf.table(kernel).clear_pending(c, place.width, task);
            return Ok(0);
        }
        let ai = arithmetic_intensity(counters.cycles, counters.flops_per_cycle, counters.cache_misses);
        let ty = self.profile.classify(ai);
        let f = self.perf.observed_frequency(c);
        self.perf.record_type(kernel, f, ty);
        self.perf.update(kernel, c, place.width, observed)?;
        self.perf.table(kernel).clear_pending(c, place.width, task);
        self.remap_deferred(core, kernel)
    }

    fn remap_deferred(&mut self, core: CoreId, kernel: usize) -> Result<usize> {
        let Some(mut waiting) = self.deferred.remove(&kernel) else {
            return Ok(0);
        };
        waiting.sort_unstable();
        let n = waiting.len();
        for t in waiting {
            self.map(core, t)?;
        }
        Ok(n)
    }

    fn finish_mapping(&mut self, core: CoreId, mapped: usize) {
        let d = mapped as f64 * self.opts.map_overhead_s;
        if d > 0.0 {
            self.set_mode(core, CoreMode::Scheduling);
        }
        self.queue.push(self.now + d, EventKind::Step, core);
    }

    fn release(&mut self, core: CoreId, task: TaskId) -> Result<()> {
        let t = &mut self.tasks[task];
        t.released_by = core;
        t.released_at = self.now;
        self.log(core, "release", Some(task), String::new);
        self.map(core, task)
    }

    fn map(&mut self, core: CoreId, task: TaskId) -> Result<()> {
        let node = &self.dag.nodes[task];
        let kernel = node.kernel;
        let critical = node.critical;
        let (place, decision, stealable) = match self.policy {
            SchedulerPolicy::Rws => (rws_place(self.topology, core), DecisionKind::Policy, true),
            SchedulerPolicy::Cats => {
                let fast = self.cats_fast.expect("set for cats");
                (cats_place(self.topology, fast, critical, core, &mut self.rng_map), DecisionKind::Policy, true)
            }
            SchedulerPolicy::Erase => {
                self.perf.table(kernel);
                let inputs =
                    MapInputs { topology: self.topology, board: &self.board, perf: &self.perf, profile: self.profile };
                match map_task(&inputs, kernel, &mut self.rng_map)? {
                    MapDecision::Training(p) => (p, DecisionKind::Training, true),
                    MapDecision::Energy { chosen, alternatives } => {
                        let t = &mut self.tasks[task];
                        t.estimate = Some(chosen);
                        t.alternatives = alternatives.iter().map(|a| a.predicted_energy_mj).collect();
                        (chosen.place, DecisionKind::Energy, true)
                    }
                    MapDecision::Deferred => {
                        self.defer(core, task, kernel);
                        return Ok(());
                    }
                }
            }
            SchedulerPolicy::Calc => match self.perf.table(kernel).next_training_config() {
                TrainingSlot::Open(cfg) => {
                    (random_place(self.topology, cfg, &mut self.rng_map), DecisionKind::Training, true)
                }
                TrainingSlot::AllPending => {
                    self.defer(core, task, kernel);
                    return Ok(());
                }
                TrainingSlot::Trained => {
                    let table = self.perf.get(kernel).expect("allocated above");
                    let choice = calc_place(self.topology, table, critical, core, &mut self.rng_map)?;
                    (choice.place, DecisionKind::Policy, choice.stealable)
                }
            },
        };
        if decision == DecisionKind::Training {
            self.perf.table(kernel).mark_pending(place.cluster, place.width, task)?;
            self.trainings.push(TrainingRecord {
                time: self.now,
                task,
                kernel: self.dag.kernels[kernel].name.clone(),
                cluster: place.cluster,
                width: place.width,
            });
        }
        let cluster_size = self.topology.cluster(place.cluster).core_count;
        let t = &mut self.tasks[task];
        t.decision = decision;
        t.mapped = Some(place);
        t.place = Some(place);
        t.stealable = stealable && (!self.policy.uses_models() || place.width < cluster_size);
        self.cores[place.leader].wq.push_back(task);
        self.in_wq += 1;
        self.log(core, "map", Some(task), || format!("{decision:?} leader={} width={}", place.leader, place.width));
        Ok(())
    }

    fn defer(&mut self, core: CoreId, task: TaskId, kernel: usize) {
        self.tasks[task].deferrals += 1;
        self.deferred.entry(kernel).or_default().push(task);
        self.log(core, "defer", Some(task), String::new);
    }

    fn dvfs_change(&mut self, index: usize) -> Result<()> {
        let changes: Vec<(ClusterId, u64)> = match &self.opts.dvfs {
            DvfsSchedule::None => Vec::new(),
            DvfsSchedule::Explicit(steps) => {
                let s = steps[index];
                match s.cluster {
                    Some(c) => vec![(c, s.freq_hz)],
                    None => (0..self.topology.cluster_count()).map(|c| (c, s.freq_hz)).collect(),
                }
            }
            DvfsSchedule::RandomAlternating { min_gap_s, max_gap_s } => {
                let gap = self.rng_dvfs.random_range(*min_gap_s..=*max_gap_s);
                self.queue.push(self.now + gap, EventKind::DvfsChange, 0);
                (0..self.topology.cluster_count())
                    .map(|c| {
                        let spec = self.topology.cluster(c);
                        let to = if self.freqs.get(c) == spec.max_frequency() {
                            spec.min_frequency()
                        } else {
                            spec.max_frequency()
                        };
                        (c, to)
                    })
                    .collect()
            }
        };
        for (c, to) in changes {
            let from = self.freqs.get(c);
            if from == to {
                continue;
            }
            self.freqs.set(self.topology, c, to)?;
            self.dvfs_log.push(DvfsRecord { time: self.now, cluster: c, from_hz: from, to_hz: to });
            self.log(c, "dvfs", None, || format!("cluster={c} {from}->{to}"));
        }
        Ok(())
    }

    fn finish(mut self) -> SimReport {
        let end = self.now;
        for c in 0..self.cores.len() {
            self.close_interval(c);
        }
        let mut place_counts: Vec<PlaceCount> = self
            .topology
            .enumerate_places()
            .into_iter()
            .map(|cfg| PlaceCount {
                cluster: cfg.cluster,
                cluster_tag: self.topology.cluster(cfg.cluster).tag.clone(),
                width: cfg.width,
                tasks: 0,
            })
            .collect();
        let mut outcomes = Vec::with_capacity(self.tasks.len());
        let mut predictions = Vec::new();
        let mut task_mj = 0.0;
        for (id, t) in self.tasks.iter().enumerate() {
            let place = t.place.expect("completed tasks are placed");
            if let Some(pc) = place_counts.iter_mut().find(|p| p.cluster == place.cluster && p.width == place.width) {
                pc.tasks += 1;
            }
            let actual = t.leader_finish - t.leader_start;
            if let Some(est) = &t.estimate {
                predictions.push(predicted_vs_actual_log(id, est, actual, t.billed_mj));
            }
            task_mj += t.billed_mj;
            outcomes.push(TaskOutcome {
                id,
                kernel: self.dag.kernels[self.dag.nodes[id].kernel].name.clone(),
                critical: self.dag.nodes[id].critical,
                released_by: t.released_by,
                released_at: t.released_at,
                decision: t.decision,
                deferrals: t.deferrals,
                mapped_place: t.mapped.expect("completed tasks are mapped"),
                executed_place: place,
                stolen: t.stolen,
                dispatched_at: t.dispatched_at,
                leader_start: t.leader_start,
                leader_finish: t.leader_finish,
                finished_at: t.finished_at,
                completed_by: t.completed_by,
                leader_freq_hz: t.leader_freq,
                counters: t.counters,
                billed_energy_mj: t.billed_mj,
                alternatives_mj: t.alternatives.clone(),
            });
        }
        let tables = self
            .perf
            .tables()
            .map(|t| TableDump {
                kernel: self.dag.kernels[t.kernel()].name.clone(),
                entries: t.dump(),
                trained: t.is_fully_trained(),
            })
            .collect();
        let mut activity = std::mem::take(&mut self.activity);
        activity.sort_by(|a, b| a.core.cmp(&b.core).then(a.start.total_cmp(&b.start)));
        SimReport {
            policy: self.policy.name().to_string(),
            platform: self.topology.name().to_string(),
            seed: self.opts.seed,
            tasks: self.tasks.len(),
            total_energy_mj: self.total_mj,
            makespan_s: end,
            idle_gap_energy_mj: self.gap_mj,
            task_energy_mj: task_mj,
            core_times: self.cores.iter().map(|c| c.times).collect(),
            place_counts,
            outcomes,
            predictions,
            sleeps: self.sleeps,
            dvfs_changes: self.dvfs_log,
            detections: self.detections,
            trainings: self.trainings,
            tables,
            initial_freq_hz: match &self.opts.initial_freq_hz {
                Some(f) => f.clone(),
                None => FrequencyState::all_max(self.topology).as_slice().to_vec(),
            },
            observed_freq_hz: self.perf.observed_frequencies().to_vec(),
            power_samples: sample_power(&self.timeline, self.opts.sample_period_s, end),
            power_timeline: self.timeline,
            activity,
            events: self.events,
        }
    }
}
