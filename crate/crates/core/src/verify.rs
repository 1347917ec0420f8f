//! Self-check suite: exact and Monte Carlo checks of the chain against its oracles.
//!
//! Every check is deterministic given its seed. [`SuiteConfig::full`] uses the sizes the
//! acceptance tests use; [`SuiteConfig::quick`] shrinks sample counts for smoke runs.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{draw_fading, realized_success, success_probability, InterferenceMode};
use crate::glauber::{pick_uniform_link, single_site_update, ScheduleState, WeightFunction};
use crate::linkset::LinkSet;
use crate::oracle::{
    empirical_distribution, max_weight_schedule, mrf_conditional_check, single_site_kernel, stationary_distribution,
    tv_distance, verify_detailed_balance,
};
use crate::schedule::{is_valid_decision_schedule, parallel_update, run_decision_protocol, ProtocolConfig};
use crate::topology::{generate_topology, NetworkConfig, NetworkParams, Topology};

pub const STATIONARITY_TOL: f64 = 1e-10;
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;
pub const TV_TOL: f64 = 0.02;
pub const MC_SIGMAS: f64 = 3.0;

/// Side length used for small oracle instances, chosen so that most links have neighbours.
pub const SMALL_SIDE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub exact_instances: usize,
    pub chain_instances: usize,
    pub chain_updates: usize,
    pub burn_in: usize,
    pub protocol_topologies: usize,
    pub protocol_runs: usize,
    pub mrf_instances: usize,
    pub mc_cases: usize,
    pub mc_draws: usize,
    pub mode_instances: usize,
    pub protocol: ProtocolConfig,
}

impl SuiteConfig {
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            exact_instances: 25,
            chain_instances: 3,
            chain_updates: 1_000_000,
            burn_in: 100_000,
            protocol_topologies: 10,
            protocol_runs: 100_000,
            mrf_instances: 7,
            mc_cases: 20,
            mc_draws: 100_000,
            mode_instances: 10,
            protocol: ProtocolConfig::default(),
        }
    }

    /// Smaller sample counts under the same tolerances, for smoke runs.
    pub fn quick(seed: u64) -> Self {
        Self {
            exact_instances: 20,
            chain_instances: 1,
            chain_updates: 200_000,
            burn_in: 20_000,
            protocol_runs: 20_000,
            mrf_instances: 3,
            mc_draws: 20_000,
            mode_instances: 4,
            ..Self::full(seed)
        }
    }
}

fn small_config() -> NetworkConfig<f64> {
    let params = NetworkParams { side_length: SMALL_SIDE, ..NetworkParams::default() };
    NetworkConfig::new(params).expect("valid small-instance parameters")
}

/// `n` uniform links in a small square and queues uniform in `queue_range`.
pub fn small_instance(n: usize, queue_range: (u64, u64), seed: u64) -> (Topology<f64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = Topology::uniform(small_config(), n, &mut rng);
    let queues = (0..n).map(|_| rng.gen_range(queue_range.0..=queue_range.1)).collect();
    (topo, queues)
}

/// Instances for the exact stationarity check: `N` cycles through 2..=6.
pub fn stationarity_exact(instances: usize, seed: u64) -> CheckOutcome {
    let wf = WeightFunction::log01x();
    let results: Vec<(f64, f64, f64)> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let n = 2 + k % 5;
            let (topo, q) = small_instance(n, (1, 10_000), seed.wrapping_add(k as u64));
            let pi = stationary_distribution(&topo, &q, &wf).expect("small instance");
            let p = single_site_kernel(&topo, &q, &wf).expect("small instance");
            (p.stationarity_residual(&pi), verify_detailed_balance(&pi, &p), p.max_row_defect())
        })
        .collect();
    let res = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let db = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let rows = results.iter().map(|r| r.2).fold(0.0, f64::max);
    CheckOutcome {
        name: "stationarity-exact",
        passed: instances > 0 && res < STATIONARITY_TOL && db < DETAILED_BALANCE_TOL && rows < 1e-12,
        detail: format!("{instances} instances, max |PiP-Pi|_1 = {res:.2e}, max balance residual = {db:.2e}"),
    }
}

fn chain_instance(k: usize, seed: u64) -> (Topology<f64>, Vec<u64>) {
    small_instance(5, (1, 200), seed.wrapping_add(1000 + k as u64))
}

/// Single-site chain on frozen queues, `N = 5`.
pub fn single_site_tv(instances: usize, updates: usize, burn_in: usize, seed: u64) -> CheckOutcome {
    let wf = WeightFunction::log01x();
    let tvs: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let (topo, q) = chain_instance(k, seed);
            let pi = stationary_distribution(&topo, &q, &wf).expect("small instance");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157 ^ k as u64);
            let mut state = ScheduleState::new(LinkSet::empty(5), q).expect("sizes match");
            let emp = empirical_distribution(5, updates, burn_in, || {
                let i = pick_uniform_link(&topo, &mut rng).expect("non-empty");
                single_site_update(&mut state, i, &topo, &wf, &mut rng);
                state.active.to_mask()
            });
            tv_distance(&pi, &emp)
        })
        .collect();
    tv_outcome("single-site-tv", &tvs, updates, burn_in)
}

/// Parallel chain (protocol schedules plus simultaneous updates) on the instances of
/// [`single_site_tv`].
pub fn parallel_tv(instances: usize, updates: usize, burn_in: usize, pc: &ProtocolConfig, seed: u64) -> CheckOutcome {
    let wf = WeightFunction::log01x();
    let tvs: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let (topo, q) = chain_instance(k, seed);
            let pi = stationary_distribution(&topo, &q, &wf).expect("small instance");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a11 ^ k as u64);
            let mut state = ScheduleState::new(LinkSet::empty(5), q).expect("sizes match");
            let emp = empirical_distribution(5, updates, burn_in, || {
                let d = run_decision_protocol(&topo, pc, &mut rng);
                parallel_update(&mut state, d.members(), &topo, &wf, &mut rng).expect("protocol output is valid");
                state.active.to_mask()
            });
            tv_distance(&pi, &emp)
        })
        .collect();
    tv_outcome("parallel-tv", &tvs, updates, burn_in)
}

fn tv_outcome(name: &'static str, tvs: &[f64], updates: usize, burn_in: usize) -> CheckOutcome {
    let worst = tvs.iter().copied().fold(0.0, f64::max);
    CheckOutcome {
        name,
        passed: !tvs.is_empty() && worst <= TV_TOL,
        detail: format!("{} instances, N = 5, {updates} updates ({burn_in} burn-in), max TV = {worst:.4}", tvs.len()),
    }
}

/// Protocol runs spread evenly over default-size random topologies.
pub fn protocol_validity(topologies: usize, runs: usize, pc: &ProtocolConfig, seed: u64) -> CheckOutcome {
    let cfg = NetworkConfig::<f64>::default();
    let per = runs.div_ceil(topologies.max(1));
    let results: Vec<(usize, usize, usize, f64)> = (0..topologies)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2000 + k as u64));
            let topo = generate_topology(&cfg, &mut rng);
            let n = topo.n_links();
            let mut counts = vec![0usize; n];
            let mut invalid = 0;
            for _ in 0..per {
                let d = run_decision_protocol(&topo, pc, &mut rng);
                invalid += usize::from(!is_valid_decision_schedule(&topo, d.members()));
                for i in d.members().iter() {
                    counts[i] += 1;
                }
            }
            let never = counts.iter().filter(|&&c| c == 0).count();
            let min_freq = counts.iter().map(|&c| c as f64 / per as f64).fold(1.0, f64::min);
            (n, invalid, never, min_freq)
        })
        .collect();
    let invalid: usize = results.iter().map(|r| r.1).sum();
    let never: usize = results.iter().map(|r| r.2).sum();
    let links: usize = results.iter().map(|r| r.0).sum();
    let min_freq = results.iter().map(|r| r.3).fold(1.0, f64::min);
    CheckOutcome {
        name: "protocol-validity",
        passed: topologies > 0 && invalid == 0 && never == 0,
        detail: format!(
            "{} runs over {topologies} topologies ({links} links): {invalid} invalid, {never} links never selected, \
             min selection frequency {min_freq:.4}",
            per * topologies
        ),
    }
}

/// Exact locality check for `N` cycling through 4..=8.
pub fn markov_field(instances: usize, seed: u64) -> CheckOutcome {
    let wf = WeightFunction::log01x();
    let worst = (0..instances)
        .map(|k| {
            let (topo, q) = small_instance(4 + k % 5, (1, 10_000), seed.wrapping_add(3000 + k as u64));
            mrf_conditional_check(&topo, &q, &wf).expect("small instance")
        })
        .fold(0.0, f64::max);
    CheckOutcome {
        name: "markov-field",
        passed: instances > 0 && worst == 0.0,
        detail: format!("{instances} instances, N <= 8, max conditional difference = {worst:e}"),
    }
}

/// One Monte Carlo case: link, active set, analytic probability, empirical frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingCase {
    pub link: usize,
    pub active: LinkSet,
    pub analytic: f64,
    pub empirical: f64,
    pub sigmas: f64,
}

/// Compares realized success frequency with the all-links closed form on random cases
/// drawn from default-size topologies. The active set always contains some close-in
/// neighbours so that the probability is not trivially one.
pub fn fading_cases(cases: usize, draws: usize, seed: u64) -> Vec<FadingCase> {
    let cfg = NetworkConfig::<f64>::default();
    (0..cases)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4000 + k as u64));
            let topo = loop {
                let t = generate_topology(&cfg, &mut rng);
                if (0..t.n_links()).any(|i| !t.neighbours(i).is_empty()) {
                    break t;
                }
            };
            let n = topo.n_links();
            let candidates: Vec<usize> = (0..n).filter(|&i| !topo.neighbours(i).is_empty()).collect();
            let i = *candidates.choose(&mut rng).expect("non-empty");
            let mut active = LinkSet::from_ids(n, [i]);
            let nb = topo.neighbours(i);
            let take = rng.gen_range(1..=nb.len().min(3));
            for &j in nb.choose_multiple(&mut rng, take) {
                active.insert(j);
            }
            for _ in 0..rng.gen_range(0..4) {
                active.insert(rng.gen_range(0..n));
            }
            let analytic = success_probability(&topo, &active, i, InterferenceMode::AllLinks).expect("i is active");
            let pairs: Vec<(usize, usize)> = active.iter().map(|j| (i, j)).collect();
            let hits = (0..draws)
                .filter(|_| {
                    let draw = draw_fading(&mut rng, pairs.iter().copied());
                    realized_success(&topo, &active, i, &draw).expect("all gains drawn")
                })
                .count();
            let empirical = hits as f64 / draws as f64;
            let sd = (analytic * (1.0 - analytic) / draws as f64).sqrt();
            let sigmas = if sd > 0.0 {
                (empirical - analytic).abs() / sd
            } else if empirical == analytic {
                0.0
            } else {
                f64::INFINITY
            };
            FadingCase { link: i, active, analytic, empirical, sigmas }
        })
        .collect()
}

pub fn fading_monte_carlo(cases: usize, draws: usize, seed: u64) -> CheckOutcome {
    let results = fading_cases(cases, draws, seed);
    let worst = results.iter().map(|c| c.sigmas).fold(0.0, f64::max);
    let range = results.iter().fold((1.0f64, 0.0f64), |(lo, hi), c| (lo.min(c.analytic), hi.max(c.analytic)));
    CheckOutcome {
        name: "fading-monte-carlo",
        passed: cases > 0 && worst <= MC_SIGMAS,
        detail: format!(
            "{cases} cases x {draws} draws, analytic range [{:.3}, {:.3}], worst deviation {worst:.2} sigma",
            range.0, range.1
        ),
    }
}

/// `N = 4`, every queue at 10^4: the mode of the stationary distribution against the
/// exhaustive max-weight schedule on raw queues.
pub fn mode_concentration(instances: usize, seed: u64) -> CheckOutcome {
    let wf = WeightFunction::log01x();
    let mismatches: Vec<usize> = (0..instances)
        .filter(|&k| {
            let (topo, _) = small_instance(4, (1, 1), seed.wrapping_add(5000 + k as u64));
            let q = vec![10_000; 4];
            let pi = stationary_distribution(&topo, &q, &wf).expect("small instance");
            let mw = max_weight_schedule(&topo, &q, None).expect("small instance");
            pi.argmax() != mw.to_mask()
        })
        .collect();
    CheckOutcome {
        name: "mode-concentration",
        passed: instances > 0 && mismatches.is_empty(),
        detail: format!("{instances} instances, N = 4, q = 1e4: {} mismatches", mismatches.len()),
    }
}

/// Runs every check in a fixed order.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<CheckOutcome> {
    let s = cfg.seed;
    vec![
        stationarity_exact(cfg.exact_instances, s),
        single_site_tv(cfg.chain_instances, cfg.chain_updates, cfg.burn_in, s),
        parallel_tv(cfg.chain_instances, cfg.chain_updates, cfg.burn_in, &cfg.protocol, s),
        protocol_validity(cfg.protocol_topologies, cfg.protocol_runs, &cfg.protocol, s),
        markov_field(cfg.mrf_instances, s),
        fading_monte_carlo(cfg.mc_cases, cfg.mc_draws, s),
        mode_concentration(cfg.mode_instances, s),
    ]
}
