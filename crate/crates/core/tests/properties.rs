mod common;

use std::collections::BTreeMap;

use common::{fixture_rng, oracle_argmin, quiet, sim, MapperFixture};
use erase_sim::baselines::SchedulerPolicy;
use erase_sim::engine::SimOptions;
use erase_sim::experiment::ExperimentConfig;
use erase_sim::mapper::{candidate_places, map_task, MapDecision, PredictionRecord};
use erase_sim::metrics::{distributions, mape, MapeField};
use erase_sim::perf::PerformanceTable;
use erase_sim::platform::PlatformTopology;
use erase_sim::power::{classify, derive_thresholds, AiThresholds, PowerProfile};
use erase_sim::workload::{counters_for, generate_synthetic_dag, ground_truth_time, kernel, TaskDag};
use proptest::prelude::*;

fn topo_order_exists(dag: &TaskDag) -> bool {
    let mut deps = dag.dependency_counts();
    let mut ready: Vec<usize> = (0..dag.len()).filter(|&i| deps[i] == 0).collect();
    let mut seen = 0;
    while let Some(t) = ready.pop() {
        seen += 1;
        for &s in &dag.nodes[t].successors {
            deps[s] -= 1;
            if deps[s] == 0 {
                ready.push(s);
            }
        }
    }
    seen == dag.len()
}

fn rescaled(f: &MapperFixture, k: f64) -> MapperFixture {
    f.with_times(f.times.iter().map(|(&key, &t)| (key, t * k)).collect())
}

fn chosen(f: &MapperFixture, seed: u64) -> (usize, u32, usize) {
    match map_task(&f.inputs(), 0, &mut fixture_rng(seed)).unwrap() {
        MapDecision::Energy { chosen, .. } => (chosen.place.cluster, chosen.place.width, chosen.place.leader),
        other => panic!("trained fixture mapped as {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn synthetic_dags_are_acyclic_with_dop_children_of_the_root(
        dop in 1u32..9,
        extra in 1usize..400,
        seed in any::<u64>(),
    ) {
        let total = dop as usize + extra;
        let dag = generate_synthetic_dag(dop, total, vec![kernel::matmul(), kernel::copy()], seed).unwrap();
        prop_assert_eq!(dag.len(), total);
        prop_assert!(topo_order_exists(&dag));
        prop_assert_eq!(dag.roots.len(), 1);
        prop_assert_eq!(dag.nodes[dag.roots[0]].successors.len(), dop as usize);
    }

    #[test]
    fn ground_truth_time_does_not_grow_with_width_or_frequency(k in 0usize..3, level in 0usize..11) {
        let topo = PlatformTopology::tx2();
        let kern = [kernel::matmul(), kernel::copy(), kernel::stencil()][k].clone();
        for c in 0..topo.cluster_count() {
            let levels = &topo.cluster(c).frequency_levels_hz;
            let (lo, hi) = (levels[level], levels[level + 1]);
            let widths = topo.cluster(c).widths();
            for pair in widths.windows(2) {
                let narrow = ground_truth_time(&kern, c, pair[0], lo, &topo);
                prop_assert!(ground_truth_time(&kern, c, pair[1], lo, &topo) <= narrow);
            }
            for &w in &widths {
                prop_assert!(ground_truth_time(&kern, c, w, hi, &topo) <= ground_truth_time(&kern, c, w, lo, &topo));
                let t = ground_truth_time(&kern, c, w, lo, &topo);
                let ctr = counters_for(&kern, t, lo);
                prop_assert!(((ctr.cycles / t) / lo as f64 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classification_is_monotone_in_intensity(a in 0.01f64..100.0, b in 0.01f64..100.0, low in 0.5f64..10.0, gap in 0.5f64..20.0) {
        let th = AiThresholds::new(low, low + gap).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify(lo, &th) <= classify(hi, &th));
    }

    #[test]
    fn thresholds_ignore_order_and_follow_power_of_two_scaling(
        mut values in prop::collection::vec(0.1f64..100.0, 3..30),
        rot in 0usize..30,
        exp in -4i32..5,
    ) {
        let mut d = values.clone();
        d.sort_by(f64::total_cmp);
        d.dedup();
        prop_assume!(d.len() >= 3);
        let base = derive_thresholds(&values).unwrap();
        let n = values.len();
        values.rotate_left(rot % n);
        values.reverse();
        prop_assert_eq!(derive_thresholds(&values).unwrap(), base);
        let k = 2f64.powi(exp);
        let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
        let s = derive_thresholds(&scaled).unwrap();
        prop_assert_eq!((s.low, s.high), (base.low * k, base.high * k));
    }

    #[test]
    fn mapper_choice_survives_power_of_two_time_scaling(seed in any::<u64>(), exp in -6i32..7) {
        let f = MapperFixture::random(seed);
        let g = rescaled(&f, 2f64.powi(exp));
        prop_assert_eq!(chosen(&f, seed), chosen(&g, seed));
    }

    #[test]
    fn mapper_keeps_a_choice_that_gets_cheaper(seed in any::<u64>(), shrink in 0.05f64..1.0) {
        let f = MapperFixture::random(seed);
        let (c, w, leader) = chosen(&f, seed);
        let mut times = f.times.clone();
        *times.get_mut(&(c, w)).unwrap() *= shrink;
        let g = f.with_times(times);
        prop_assert_eq!(chosen(&g, seed), (c, w, leader));
        let places = candidate_places(&g.topology, &mut fixture_rng(seed));
        let (i, _) = oracle_argmin(&g, &places);
        prop_assert_eq!((places[i].cluster, places[i].width), (c, w));
    }

    #[test]
    fn ema_error_shrinks_geometrically(init in 1e-4f64..1.0, target in 1e-4f64..1.0, w in 0.0f64..0.99, n in 1usize..40) {
        let topo = PlatformTopology::symmetric(1);
        let mut t = PerformanceTable::new(0, &topo);
        t.update(0, 1, init, w).unwrap();
        for _ in 0..n {
            t.update(0, 1, target, w).unwrap();
        }
        let err = (t.entry(0, 1).unwrap() - target).abs();
        prop_assert!(err <= w.powi(n as i32) * (init - target).abs() + 1e-15);
    }

    #[test]
    fn mape_is_scale_free(
        pairs in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 1..50),
        k in 1e-3f64..1e3,
    ) {
        let recs = |s: f64| -> Vec<PredictionRecord> {
            pairs
                .iter()
                .enumerate()
                .map(|(task, &(a, p))| PredictionRecord {
                    task,
                    predicted_seconds: p * s,
                    actual_seconds: a * s,
                    predicted_energy_mj: p * s,
                    actual_energy_mj: a * s,
                })
                .collect()
        };
        let base = mape(&recs(1.0), MapeField::Time).unwrap();
        let scaled = mape(&recs(k), MapeField::Energy).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn experiment_config_survives_toml(
        dag in prop::sample::select(vec!["matmul", "copy+stencil", "sparselu:4"]),
        dop in prop::collection::vec(1u32..9, 1..4),
        tasks in 10usize..100_000,
        seed in any::<u64>(),
        reps in 1u32..10,
        noise in 0.0f64..0.1,
        backoff_n in 1u32..500,
        detection in any::<bool>(),
        policy in prop::sample::select(SchedulerPolicy::ALL.to_vec()),
    ) {
        let mut c = ExperimentConfig {
            dag: dag.to_string(),
            dop,
            tasks,
            seed,
            reps,
            noise,
            policy,
            dvfs_schedule: Some("random:3,12".into()),
            freq: BTreeMap::from([("denver".to_string(), "MIN".to_string())]),
            ..ExperimentConfig::default()
        };
        c.params.backoff_n = backoff_n;
        c.params.dvfs_detection = detection;
        prop_assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distribution_fractions_sum_to_one(
        dop in 1u32..7,
        seed in any::<u64>(),
        policy in prop::sample::select(SchedulerPolicy::ALL.to_vec()),
    ) {
        let topo = PlatformTopology::tx2();
        let prof = PowerProfile::tx2();
        let dag = generate_synthetic_dag(dop, 150, vec![kernel::matmul(), kernel::copy()], seed).unwrap();
        let r = sim(&dag, &topo, &prof, policy, &SimOptions { seed, noise_sigma: 0.02, ..quiet() });
        let d = distributions(&r);
        let sum: f64 = d.places.iter().map(|p| p.fraction).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert_eq!(d.places.iter().map(|p| p.tasks).sum::<usize>(), 150);
        for c in &d.cores {
            prop_assert!((c.task + c.sleep + c.steal + c.scheduling - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn power_profiles_survive_toml() {
    for p in [PowerProfile::tx2(), PowerProfile::symmetric(&PlatformTopology::symmetric(16))] {
        assert_eq!(PowerProfile::from_toml(&p.to_toml()).unwrap(), p);
    }
}
