mod common;

use common::{kernel, quiet, rel_close, sim};
use erase_sim::baselines::SchedulerPolicy;
use erase_sim::engine::{BackoffConfig, DvfsSchedule, DvfsStep, SimOptions};
use erase_sim::platform::PlatformTopology;
use erase_sim::power::PowerProfile;
use erase_sim::workload::{generate_synthetic_dag, ground_truth_time, kernel as presets, TaskDag};

fn sym(n: u32) -> (PlatformTopology, PowerProfile) {
    let t = PlatformTopology::symmetric(n);
    let p = PowerProfile::symmetric(&t);
    (t, p)
}

#[test]
fn single_task_energy_is_runtime_plus_idle_times_duration() {
    let (topo, prof) = sym(1);
    let dag = TaskDag::from_edges(vec![presets::matmul()], vec![0], &[], 1).unwrap();
    let t = ground_truth_time(&dag.kernels[0], 0, 1, 2_100_000_000, &topo);
    let opts = SimOptions { map_overhead_s: 0.0, ..quiet() };
    // CATS needs two clusters.
    for policy in [SchedulerPolicy::Erase, SchedulerPolicy::Rws, SchedulerPolicy::Calc] {
        let r = sim(&dag, &topo, &prof, policy, &opts);
        assert_eq!(r.makespan_s, t, "{policy}");
        // compute-bound width 1: 3000 + 2500 mW; chip idle 40000 mW
        assert!(rel_close(r.total_energy_mj, (5500.0 + 40_000.0) * t, 1e-12), "{policy}");
        assert!(rel_close(r.outcomes[0].billed_energy_mj, r.total_energy_mj, 1e-12));
    }
}

#[test]
fn two_concurrent_tasks_split_idle_power() {
    let (topo, prof) = sym(2);
    let dag = TaskDag::from_edges(vec![presets::copy()], vec![0, 0], &[], 2).unwrap();
    let opts = SimOptions { map_overhead_s: 0.0, pretrain: true, ..quiet() };
    let r = sim(&dag, &topo, &prof, SchedulerPolicy::Erase, &opts);
    let t = ground_truth_time(&dag.kernels[0], 0, 1, 2_100_000_000, &topo);
    let (runtime, idle) = (3500.0, 40_000.0);
    for o in &r.outcomes {
        assert_eq!(o.executed_place.width, 1);
        assert_eq!(o.leader_start, 0.0);
        assert!(rel_close(o.billed_energy_mj, (runtime + idle / 2.0) * t, 1e-3));
    }
    assert_ne!(r.outcomes[0].executed_place.leader, r.outcomes[1].executed_place.leader);
    assert!(rel_close(r.total_energy_mj, (2.0 * runtime + idle) * t, 1e-9));
    assert_eq!(r.makespan_s, t);
}

#[test]
fn fork_join_flow_on_the_event_log() {
    // T0 -> {T1 w1, T2 w2, T3 w1} -> T4
    let (topo, prof) = sym(4);
    let narrow = kernel("narrow", 1e-3, 400.0, &[1.0, 0.5, 0.25]);
    let mold2 = kernel("mold2", 2e-3, 400.0, &[1.0, 1.0, 0.5]);
    let tail = kernel("tail", 10e-3, 400.0, &[1.0, 0.5, 0.25]);
    let dag = TaskDag::from_edges(
        vec![narrow, mold2, tail],
        vec![0, 0, 1, 0, 2],
        &[(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 4)],
        3,
    )
    .unwrap();
    let n = 3000;
    let steal = 1e-6;
    let opts = SimOptions {
        map_overhead_s: 0.0,
        pretrain: true,
        record_events: true,
        steal_cost_s: steal,
        backoff: BackoffConfig { attempts: n, ..BackoffConfig::default() },
        ..quiet()
    };
    let r = sim(&dag, &topo, &prof, SchedulerPolicy::Erase, &opts);
    let widths: Vec<u32> = r.outcomes.iter().map(|o| o.executed_place.width).collect();
    assert_eq!(widths, vec![1, 1, 2, 1, 1]);

    let starts: Vec<_> = r.events.iter().filter(|e| e.kind == "share_start" && e.task == Some(2)).collect();
    assert_eq!(starts.len(), 2);
    let cores: Vec<usize> = starts.iter().map(|e| e.core).collect();
    let place: Vec<usize> = r.outcomes[2].executed_place.cores().collect();
    assert_eq!(cores.iter().copied().collect::<std::collections::BTreeSet<_>>(), place.into_iter().collect());
    assert_eq!(starts.iter().filter(|e| e.detail.starts_with("leader=true")).count(), 1);

    let last = (1..4).max_by(|&a, &b| r.outcomes[a].finished_at.total_cmp(&r.outcomes[b].finished_at)).unwrap();
    let release = r.events.iter().find(|e| e.kind == "release" && e.task == Some(4)).unwrap();
    assert_eq!(release.core, r.outcomes[last].completed_by);
    assert_eq!(release.time, r.outcomes[last].finished_at);
    assert_eq!(r.outcomes[4].released_by, r.outcomes[last].completed_by);

    // A core idle since its last share finishes sleeps after exactly N failed
    // attempts spaced by the steal cost.
    let slept_after_n = r.events.iter().filter(|e| e.kind == "sleep").any(|s| {
        r.events
            .iter()
            .rfind(|e| e.core == s.core && e.time <= s.time && (e.kind == "share_finish" || e.kind == "wake"))
            .is_some_and(|prev| (s.time - prev.time - (n - 1) as f64 * steal).abs() < 1e-9)
    });
    assert!(slept_after_n, "{}", r.event_log_tsv());
}

#[test]
fn steals_stay_inside_the_cluster_and_keep_width() {
    let topo = PlatformTopology::tx2();
    let prof = PowerProfile::tx2();
    for k in [presets::copy(), presets::stencil()] {
        let dag = generate_synthetic_dag(6, 600, vec![k], 1).unwrap();
        let opts = SimOptions { record_events: true, ..quiet() };
        let r = sim(&dag, &topo, &prof, SchedulerPolicy::Erase, &opts);
        let mut steals = 0;
        for e in r.events.iter().filter(|e| e.kind == "steal") {
            steals += 1;
            let victim: usize = e.detail.split_whitespace().next().unwrap()["victim=".len()..].parse().unwrap();
            assert_eq!(topo.cluster_of(victim), topo.cluster_of(e.core));
        }
        for o in r.outcomes.iter().filter(|o| o.stolen) {
            assert_eq!(o.executed_place.width, o.mapped_place.width);
            assert_eq!(o.executed_place.cluster, o.mapped_place.cluster);
            assert!(o.executed_place.width < topo.cluster(o.mapped_place.cluster).core_count);
        }
        assert!(steals > 0);
        assert_eq!(r.outcomes.iter().filter(|o| o.stolen).count(), steals);
    }
}

#[test]
fn full_width_tasks_are_never_stolen() {
    let (topo, prof) = sym(4);
    let wide = kernel("wide", 2e-3, 400.0, &[1.0, 1.0, 1.0]);
    let dag = generate_synthetic_dag(4, 200, vec![wide], 0).unwrap();
    let opts = SimOptions { pretrain: true, ..quiet() };
    let r = sim(&dag, &topo, &prof, SchedulerPolicy::Erase, &opts);
    assert!(r.outcomes.iter().all(|o| o.executed_place.width == 4 && !o.stolen));
}

fn starvation(sleep: bool) -> erase_sim::engine::SimReport {
    let (topo, prof) = sym(2);
    let dag = TaskDag::from_edges(vec![kernel("long", 0.3, 400.0, &[1.0, 0.5])], vec![0], &[], 1).unwrap();
    let opts = SimOptions { map_overhead_s: 0.0, sleep_enabled: sleep, ..quiet() };
    sim(&dag, &topo, &prof, SchedulerPolicy::Rws, &opts)
}

#[test]
fn idle_core_backs_off_geometrically_up_to_the_cap() {
    let r = starvation(true);
    let busy = r.outcomes[0].executed_place.leader;
    let idle: Vec<f64> = r.sleeps.iter().filter(|s| s.core != busy).map(|s| s.duration).collect();
    assert!(idle.len() >= 9);
    for (k, d) in idle.iter().enumerate() {
        let ms = (1u32 << k.min(6)) as f64;
        assert_eq!(*d, ms * 1e-3, "sleep #{k}");
    }
    let no_sleep = starvation(false);
    assert!(r.idle_gap_energy_mj < no_sleep.idle_gap_energy_mj);
    assert!(r.total_energy_mj < no_sleep.total_energy_mj);
}

#[test]
fn single_attempt_threshold_sleeps_after_every_failure() {
    let (topo, prof) = sym(2);
    let dag = TaskDag::from_edges(vec![kernel("long", 0.05, 400.0, &[1.0, 0.5])], vec![0], &[], 1).unwrap();
    let opts = SimOptions {
        map_overhead_s: 0.0,
        record_events: true,
        backoff: BackoffConfig { attempts: 1, ..BackoffConfig::default() },
        ..quiet()
    };
    let r = sim(&dag, &topo, &prof, SchedulerPolicy::Rws, &opts);
    let idle = 1 - r.outcomes[0].executed_place.leader;
    let mine: Vec<&str> = r.events.iter().filter(|e| e.core == idle).map(|e| e.kind.as_str()).collect();
    assert!(mine.windows(2).all(|w| w != ["wake", "wake"] && w != ["sleep", "sleep"]));
    let first = r.sleeps.iter().find(|s| s.core == idle).unwrap();
    assert_eq!(first.start, 0.0);
}

#[test]
fn work_after_wake_resets_the_backoff() {
    // A second wave of tasks arrives after the idle core has slept several times.
    let (topo, prof) = sym(2);
    let long = kernel("long", 0.05, 400.0, &[1.0, 0.5]);
    let short = kernel("short", 1e-3, 400.0, &[1.0, 0.5]);
    let mut kernel_of = vec![0];
    let mut edges = Vec::new();
    for i in 1..=40 {
        kernel_of.push(1);
        edges.push((0, i));
    }
    let dag = TaskDag::from_edges(vec![long, short], kernel_of, &edges, 2).unwrap();
    let durations = |r: &erase_sim::engine::SimReport, core: usize| -> Vec<f64> {
        r.sleeps.iter().filter(|s| s.core == core).map(|s| s.duration).collect()
    };
    let r = sim(&dag, &topo, &prof, SchedulerPolicy::Rws, &SimOptions { map_overhead_s: 0.0, ..quiet() });
    let idle = 1 - r.outcomes[0].executed_place.leader;
    let d = durations(&r, idle);
    let restart = d.iter().skip(1).position(|&x| x == 1e-3).map(|i| i + 1);
    let restart = restart.expect("back-off restarts at 1 ms after work");
    assert!(d[..restart].windows(2).all(|w| w[1] >= w[0]));
    assert!(r.outcomes.iter().skip(1).any(|o| o.executed_place.leader == idle));
}

#[test]
fn explicit_dvfs_step_slows_later_shares() {
    let topo = PlatformTopology::tx2();
    let prof = PowerProfile::tx2();
    let dag = generate_synthetic_dag(2, 400, vec![presets::matmul()], 0).unwrap();
    let min = topo.cluster(0).min_frequency();
    let opts = SimOptions {
        dvfs: DvfsSchedule::Explicit(vec![DvfsStep { time_s: 0.05, cluster: None, freq_hz: min }]),
        ..quiet()
    };
    let r = sim(&dag, &topo, &prof, SchedulerPolicy::Rws, &opts);
    assert_eq!(r.dvfs_changes.len(), 2);
    for o in &r.outcomes {
        let expect = if o.leader_start >= 0.05 { min } else { topo.cluster(o.executed_place.cluster).max_frequency() };
        assert_eq!(o.leader_freq_hz, expect, "task {}", o.id);
        let k = &dag.kernels[0];
        let gt = ground_truth_time(k, o.executed_place.cluster, o.executed_place.width, expect, &topo);
        assert!(rel_close(o.leader_finish - o.leader_start, gt, 1e-9));
    }
}

#[test]
fn unknown_dvfs_frequency_is_rejected() {
    let topo = PlatformTopology::tx2();
    let prof = PowerProfile::tx2();
    let dag = generate_synthetic_dag(2, 50, vec![presets::matmul()], 0).unwrap();
    let opts = SimOptions {
        dvfs: DvfsSchedule::Explicit(vec![DvfsStep { time_s: 0.001, cluster: Some(0), freq_hz: 1234 }]),
        ..quiet()
    };
    assert!(erase_sim::engine::run(&dag, &topo, &prof, SchedulerPolicy::Erase, &opts).is_err());
}

#[test]
fn every_task_completes_once_and_after_its_predecessors() {
    let topo = PlatformTopology::tx2();
    let prof = PowerProfile::tx2();
    let dag = generate_synthetic_dag(4, 800, vec![presets::matmul(), presets::copy(), presets::stencil()], 3).unwrap();
    for policy in SchedulerPolicy::ALL {
        let opts = SimOptions { noise_sigma: 0.02, seed: 9, record_events: true, ..SimOptions::default() };
        let r = sim(&dag, &topo, &prof, policy, &opts);
        assert_eq!(r.tasks, dag.len());
        for (i, node) in dag.nodes.iter().enumerate() {
            let o = &r.outcomes[i];
            let shares = r.events.iter().filter(|e| e.kind == "share_start" && e.task == Some(i)).count();
            assert_eq!(shares as u32, o.executed_place.width, "{policy} task {i}");
            for &p in &node.predecessors {
                assert!(r.outcomes[p].finished_at <= o.dispatched_at, "{policy} task {i}");
            }
        }
        for (c, t) in r.core_times.iter().enumerate() {
            assert!((t.total() - r.makespan_s).abs() < 1e-9, "{policy} core {c}");
        }
    }
}

#[test]
fn identical_inputs_give_identical_reports() {
    let topo = PlatformTopology::tx2();
    let prof = PowerProfile::tx2();
    let dag = generate_synthetic_dag(4, 1000, vec![presets::stencil()], 5).unwrap();
    let opts = SimOptions {
        seed: 42,
        noise_sigma: 0.02,
        dvfs: DvfsSchedule::RandomAlternating { min_gap_s: 0.05, max_gap_s: 0.2 },
        record_events: true,
        ..SimOptions::default()
    };
    let a = sim(&dag, &topo, &prof, SchedulerPolicy::Erase, &opts);
    let b = sim(&dag, &topo, &prof, SchedulerPolicy::Erase, &opts);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = sim(&dag, &topo, &prof, SchedulerPolicy::Erase, &SimOptions { seed: 43, ..opts });
    assert_ne!(a.total_energy_mj, c.total_energy_mj);
}

#[test]
fn invalid_options_are_rejected() {
    let (topo, prof) = sym(2);
    let dag = generate_synthetic_dag(1, 3, vec![presets::matmul()], 0).unwrap();
    let bad = [
        SimOptions { steal_cost_s: 0.0, ..quiet() },
        SimOptions { noise_sigma: -1.0, ..quiet() },
        SimOptions { backoff: BackoffConfig { attempts: 0, ..BackoffConfig::default() }, ..quiet() },
        SimOptions { dvfs: DvfsSchedule::RandomAlternating { min_gap_s: 2.0, max_gap_s: 1.0 }, ..quiet() },
    ];
    for o in bad {
        assert!(erase_sim::engine::run(&dag, &topo, &prof, SchedulerPolicy::Rws, &o).is_err());
    }
}
