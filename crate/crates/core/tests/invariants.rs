use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spatial_csma::glauber::{update_probability, ScheduleState, WeightFunction};
use spatial_csma::oracle::{hardcore_distribution, stationary_distribution};
use spatial_csma::schedule::is_valid_decision_schedule;
use spatial_csma::sim::{run, run_sweep, Model, RunSpec, ServiceMode, UpdateMode};
use spatial_csma::topology::{generate_topology, NetworkConfig, NetworkParams, Topology};
use spatial_csma::verify::small_instance;
use spatial_csma::{LinkSet, Topology32};

/// `sum_x Pi(x) P_D(x, .)` where `P_D` flips every member of `d` independently with its
/// update probability at `x`.
fn push_forward(topo: &Topology<f64>, q: &[u64], pi: &[f64], d: &LinkSet) -> Vec<f64> {
    let n = topo.n_links();
    let wf = WeightFunction::log01x();
    let members: Vec<usize> = d.iter().collect();
    let mut out = vec![0.0; pi.len()];
    for (x, &mass) in pi.iter().enumerate() {
        let state = ScheduleState::new(LinkSet::from_mask(n, x as u64), q.to_vec()).unwrap();
        let p: Vec<f64> = members.iter().map(|&i| update_probability(i, &state, topo, &wf)).collect();
        for choice in 0..1u64 << members.len() {
            let mut y = x as u64;
            let mut prob = mass;
            for (k, &i) in members.iter().enumerate() {
                if choice >> k & 1 == 1 {
                    y |= 1 << i;
                    prob *= p[k];
                } else {
                    y &= !(1 << i);
                    prob *= 1.0 - p[k];
                }
            }
            out[y as usize] += prob;
        }
    }
    out
}

#[test]
fn every_valid_decision_schedule_preserves_the_stationary_distribution() {
    let wf = WeightFunction::log01x();
    let mut checked = 0;
    for seed in 0..12u64 {
        let n = 3 + seed as usize % 4;
        let (topo, q) = small_instance(n, (1, 10_000), 700 + seed);
        let pi = stationary_distribution(&topo, &q, &wf).unwrap();
        for mask in 1..1u64 << n {
            let d = LinkSet::from_mask(n, mask);
            if !is_valid_decision_schedule(&topo, &d) {
                continue;
            }
            let after = push_forward(&topo, &q, pi.masses(), &d);
            let l1: f64 = after.iter().zip(pi.masses()).map(|(a, b)| (a - b).abs()).sum();
            assert!(l1 < 1e-12, "seed {seed}, D = {d}: |Pi P_D - Pi|_1 = {l1:e}");
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn invalid_schedules_can_break_stationarity() {
    // Two links within each other's close-in range, updated together.
    let wf = WeightFunction::log01x();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let (topo, q) = small_instance(3, (50, 10_000), 900 + seed);
        let pi = stationary_distribution(&topo, &q, &wf).unwrap();
        for mask in 1..8u64 {
            let d = LinkSet::from_mask(3, mask);
            if is_valid_decision_schedule(&topo, &d) {
                continue;
            }
            let after = push_forward(&topo, &q, pi.masses(), &d);
            worst = worst.max(after.iter().zip(pi.masses()).map(|(a, b)| (a - b).abs()).sum());
        }
    }
    assert!(worst > 1e-3, "the schedule constraint should matter, worst defect {worst:e}");
}

#[test]
fn single_and_double_precision_agree() {
    let wf64 = WeightFunction::<f64>::log01x();
    let wf32 = WeightFunction::<f32>::log01x();
    for seed in 0..5u64 {
        let (t64, q) = small_instance(5, (1, 10_000), 40 + seed);
        let t32 = Topology32::import(t64.export_string().as_bytes()).unwrap();
        let p64 = stationary_distribution(&t64, &q, &wf64).unwrap();
        let p32 = stationary_distribution(&t32, &q, &wf32).unwrap();
        for (a, b) in p64.masses().iter().zip(p32.masses()) {
            assert!((a - f64::from(*b)).abs() < 1e-4);
        }
    }
}

#[test]
fn hardcore_mass_lives_on_independent_sets() {
    let wf = WeightFunction::log01x();
    let (topo, q) = small_instance(6, (1, 500), 11);
    let hc = hardcore_distribution(&topo, &q, &wf).unwrap();
    for mask in 0..64u64 {
        let set = LinkSet::from_mask(6, mask);
        let independent = set.iter().all(|i| topo.neighbours(i).iter().all(|&j| !set.contains(j)));
        assert_eq!(hc.mass(mask) > 0.0, independent, "{set}");
    }
}

fn default_instance(seed: u64) -> Topology<f64> {
    let cfg = NetworkConfig::new(NetworkParams { seed, ..NetworkParams::default() }).unwrap();
    generate_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn queues_obey_the_ledger_in_every_mode() {
    let topo = default_instance(3);
    let n = topo.n_links();
    let combos = [
        (Model::Sir, UpdateMode::Single, ServiceMode::Realized),
        (Model::Sir, UpdateMode::Parallel, ServiceMode::Analytic),
        (Model::Graph, UpdateMode::Single, ServiceMode::Deterministic),
        (Model::Graph, UpdateMode::Parallel, ServiceMode::Realized),
    ];
    for (model, update, service) in combos {
        let mut spec = RunSpec::new(model, 0.2);
        spec.update_mode = update;
        spec.service_mode = service;
        spec.horizon = 5_000;
        let m = run(&topo, spec).unwrap();
        let q = m.reconstructed_queues();
        assert_eq!(q.iter().sum::<u64>(), *m.total_queue.last().unwrap());
        for (i, &qi) in q.iter().enumerate() {
            assert_eq!(m.arrivals[i] - m.departures[i], qi, "{model:?} {update:?} link {i}");
        }
        assert_eq!(q.len(), n);
        if update == UpdateMode::Parallel {
            assert!(m.decision_sizes.iter().any(|&s| s > 1), "parallel mode should update several links at once");
        }
    }
}

#[test]
fn sweeps_do_not_depend_on_thread_scheduling() {
    let topo = default_instance(4);
    let mut spec = RunSpec::new(Model::Sir, 0.1);
    spec.horizon = 3_000;
    let a = run_sweep(&topo, &spec, &[0.05, 0.1, 0.15], 3).unwrap();
    let b = run_sweep(&topo, &spec, &[0.05, 0.1, 0.15], 3).unwrap();
    assert_eq!(a, b);
    let seeds: std::collections::HashSet<u64> = a.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 9);
}
