//! Single-site spatial CSMA update.
//!
//! In each control slot one link `i` may flip its status. Its neighbours report
//! queue-weighted success probabilities with `i` silent (inactive weights) and `i` computes
//! what they would become if it transmitted (active weights). The resulting transmit
//! probability is the conditional law of `i`'s status under the Gibbs measure
//! `Pi(M) ~ exp(sum_{j in M} mu_j(M) g(q_j))`.

use rand::Rng;

use crate::channel::{counterfactual_rate, InterferenceMode};
use crate::error::{Error, Result};
use crate::linkset::LinkSet;
use crate::scalar::{logistic, Scalar};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    /// `g(x) = log(0.1 x)`
    Log01x,
    /// `g(x) = log(log(x + e))`
    LogLog,
}

/// Queue-to-weight map `g`, clamped below by `floor` so that weights stay finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFunction<T> {
    pub kind: WeightKind,
    pub floor: T,
}

impl<T: Scalar> WeightFunction<T> {
    /// `log(0.1 x)` with the default floor `log(0.1)`.
    pub fn log01x() -> Self {
        Self { kind: WeightKind::Log01x, floor: T::lit(0.1).ln() }
    }

    /// `log log(x + e)`; its minimum is already 0, the floor matches.
    pub fn loglog() -> Self {
        Self { kind: WeightKind::LogLog, floor: T::zero() }
    }

    pub fn with_floor(mut self, floor: T) -> Self {
        self.floor = floor;
        self
    }
}

impl<T: Scalar> Default for WeightFunction<T> {
    fn default() -> Self {
        Self::log01x()
    }
}

pub fn weight_g<T: Scalar>(q: u64, wf: &WeightFunction<T>) -> T {
    let x = T::from_u64(q).unwrap_or_else(T::max_value);
    let raw = match wf.kind {
        WeightKind::Log01x => (T::lit(0.1) * x.max(T::one())).ln(),
        WeightKind::LogLog => (x + T::E()).ln().ln(),
    };
    raw.max(wf.floor)
}

/// Active set `M(t)` and queue lengths `q(t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleState {
    pub active: LinkSet,
    pub queues: Vec<u64>,
}

impl ScheduleState {
    pub fn new(active: LinkSet, queues: Vec<u64>) -> Result<Self> {
        if active.n_links() != queues.len() {
            return Err(Error::InvalidConfig(format!(
                "active set over {} links but {} queues",
                active.n_links(),
                queues.len()
            )));
        }
        Ok(Self { active, queues })
    }

    /// All links off, all queues empty.
    pub fn idle(n_links: usize) -> Self {
        Self { active: LinkSet::empty(n_links), queues: vec![0; n_links] }
    }

    pub fn n_links(&self) -> usize {
        self.queues.len()
    }

    pub fn total_queue(&self) -> u64 {
        self.queues.iter().sum()
    }
}

fn require_neighbour<T: Scalar>(topology: &Topology<T>, j: usize, i: usize) -> Result<()> {
    topology.check_link(i)?;
    topology.check_link(j)?;
    if topology.are_neighbours(i, j) {
        Ok(())
    } else {
        Err(Error::Contract(format!("link {j} is not a neighbour of link {i}")))
    }
}

/// Rate of `j` against `M(t-1)` with `i` removed, regardless of `j`'s own status.
fn rate_without<T: Scalar>(topology: &Topology<T>, active: &LinkSet, j: usize, i: usize) -> T {
    topology
        .neighbours(j)
        .iter()
        .zip(topology.neighbour_gains(j))
        .filter(|(k, _)| **k != i && active.contains(**k))
        .fold(T::one(), |acc, (_, &f)| acc * f)
}

/// `w_j^0 = g(q_j) * mu_j(M(t-1) \ {i})` for a neighbour `j` of the updating link `i`.
pub fn inactive_weight<T: Scalar>(
    j: usize,
    state: &ScheduleState,
    i: usize,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
) -> Result<T> {
    require_neighbour(topology, j, i)?;
    Ok(weight_g(state.queues[j], wf) * rate_without(topology, &state.active, j, i))
}

/// `w_j^1 = w_j^0 * f_ij` for `j` in `N_i`, and `w_i^1 = g(q_i) * mu_i(M(t-1) + {i})` for `j = i`.
pub fn active_weight<T: Scalar>(
    j: usize,
    state: &ScheduleState,
    i: usize,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
) -> Result<T> {
    if j == i {
        topology.check_link(i)?;
        let mu = counterfactual_rate(topology, &state.active, i, InterferenceMode::CloseIn);
        return Ok(weight_g(state.queues[i], wf) * mu);
    }
    Ok(inactive_weight(j, state, i, topology, wf)? * topology.gain(i, j))
}

/// Log-odds of `i` transmitting: `w_i^1 - sum_{j in M_i(t-1)} (w_j^0 - w_j^1)`.
pub fn update_log_odds<T: Scalar>(
    i: usize,
    state: &ScheduleState,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
) -> T {
    let active = &state.active;
    let mut own_rate = T::one();
    let mut penalty = T::zero();
    for (&j, &f_ij) in topology.neighbours(i).iter().zip(topology.neighbour_gains(i)) {
        if !active.contains(j) {
            continue;
        }
        own_rate = own_rate * f_ij;
        let w0 = weight_g(state.queues[j], wf) * rate_without(topology, active, j, i);
        let w1 = w0 * f_ij;
        penalty = penalty + (w0 - w1);
    }
    weight_g(state.queues[i], wf) * own_rate - penalty
}

/// Transmit probability `p(t)`, evaluated as a logistic of [`update_log_odds`].
pub fn update_probability<T: Scalar>(
    i: usize,
    state: &ScheduleState,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
) -> T {
    logistic(update_log_odds(i, state, topology, wf))
}

/// `p(t)` transcribed literally as `e^{w_i^1} / (e^{sum (w_j^0 - w_j^1)} + e^{w_i^1})`,
/// built from [`inactive_weight`] and [`active_weight`]. Overflows for large weights.
pub fn update_probability_naive<T: Scalar>(
    i: usize,
    state: &ScheduleState,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
) -> Result<T> {
    let mut sum = T::zero();
    for &j in topology.neighbours(i) {
        if state.active.contains(j) {
            sum = sum + inactive_weight(j, state, i, topology, wf)? - active_weight(j, state, i, topology, wf)?;
        }
    }
    let on = active_weight(i, state, i, topology, wf)?.exp();
    Ok(on / (sum.exp() + on))
}

/// Control slot of the single-site algorithm: link `i` turns on with probability `p(t)`,
/// off otherwise. Returns the new status of `i`.
pub fn single_site_update<T: Scalar, R: Rng + ?Sized>(
    state: &mut ScheduleState,
    i: usize,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
    rng: &mut R,
) -> bool {
    let p = update_probability(i, state, topology, wf);
    let on = T::sample_open01(rng) < p;
    state.active.set(i, on);
    on
}

pub fn pick_uniform_link<T: Scalar, R: Rng + ?Sized>(topology: &Topology<T>, rng: &mut R) -> Result<usize> {
    match topology.n_links() {
        0 => Err(Error::EmptyTopology),
        n => Ok(rng.gen_range(0..n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{NetworkConfig, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Topology<f64> {
        let pos = xs.iter().map(|&x| Point { x, y: 0.0 }).collect();
        Topology::from_positions(NetworkConfig::default(), pos, vec![0.0; xs.len()]).unwrap()
    }

    fn state(n: usize, active: &[usize], queues: &[u64]) -> ScheduleState {
        ScheduleState::new(LinkSet::from_ids(n, active.iter().copied()), queues.to_vec()).unwrap()
    }

    #[test]
    fn weight_function_values() {
        let wf = WeightFunction::<f64>::log01x();
        assert_eq!(weight_g(10, &wf), 0.0);
        assert!((weight_g(100, &wf) - 10f64.ln()).abs() < 1e-15);
        assert!((weight_g(100, &wf) - std::f64::consts::LN_10).abs() < 1e-12);
        assert_eq!(weight_g(0, &wf), 0.1f64.ln());
        assert_eq!(weight_g(1, &wf), 0.1f64.ln());
        let ll = WeightFunction::<f64>::loglog();
        assert_eq!(weight_g(0, &ll), 0.0);
        assert_eq!(weight_g(0, &ll.with_floor(-1.0)), 0.0);
        assert!(weight_g(u64::MAX, &ll).is_finite());
        assert!(weight_g(u64::MAX, &wf).is_finite());
        let wf32 = WeightFunction::<f32>::log01x();
        assert!((weight_g(100, &wf32) - 10f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn weights_on_a_line() {
        // 0 -- 1 -- 2 with spacing 3: N_0 = {1}, N_1 = {0, 2}, N_2 = {1}.
        let t = line(&[0.0, 3.0, 6.0]);
        let wf = WeightFunction::log01x();
        let s = state(3, &[0, 1, 2], &[100, 1000, 10]);
        // j = 1 updates as seen by i = 0: interferers of 1 without 0 are {2}.
        let w0 = inactive_weight(1, &s, 0, &t, &wf).unwrap();
        assert!((w0 - 100f64.ln() * t.gain(1, 2)).abs() < 1e-14);
        let w1 = active_weight(1, &s, 0, &t, &wf).unwrap();
        assert!((w1 - w0 * t.gain(0, 1)).abs() < 1e-14);
        // w_0^1 = g(q_0) * f(r_01)
        let wi = active_weight(0, &s, 0, &t, &wf).unwrap();
        assert!((wi - 10f64.ln() * t.gain(0, 1)).abs() < 1e-14);
        // j's only active neighbour is i -> full rate
        let s2 = state(3, &[0, 1], &[100, 1000, 10]);
        assert!((inactive_weight(1, &s2, 0, &t, &wf).unwrap() - 100f64.ln()).abs() < 1e-14);
        // zero weight at q = 10
        assert_eq!(inactive_weight(2, &s, 1, &t, &wf).unwrap(), 0.0);
        assert_eq!(active_weight(2, &s, 1, &t, &wf).unwrap(), 0.0);
        // not a neighbour
        assert!(matches!(inactive_weight(2, &s, 0, &t, &wf), Err(Error::Contract(_))));
    }

    #[test]
    fn isolated_link_probabilities() {
        let t = line(&[0.0, 10.0]);
        let wf = WeightFunction::log01x();
        let s = state(2, &[1], &[10, 5]);
        assert_eq!(update_probability(0, &s, &t, &wf), 0.5);
        assert_eq!(active_weight(0, &s, 0, &t, &wf).unwrap(), 0.0);
        let s = state(2, &[], &[100, 0]);
        let p = update_probability(0, &s, &t, &wf);
        assert!((p - 10.0 / 11.0).abs() < 1e-15);
        assert!((p - 0.90909).abs() < 1e-5);
    }

    #[test]
    fn two_link_probability_matches_conditional() {
        let t = line(&[0.0, 1.2]);
        let wf = WeightFunction::log01x();
        let (q0, q1) = (250u64, 4000u64);
        let (g0, g1): (f64, f64) = (weight_g(q0, &wf), weight_g(q1, &wf));
        let f = t.gain(0, 1);
        // Gibbs exponents: {} -> 0, {0} -> g0, {1} -> g1, {0,1} -> (g0 + g1) f
        let cond_with_1 = (f * (g0 + g1)).exp() / ((f * (g0 + g1)).exp() + g1.exp());
        let cond_alone = g0.exp() / (g0.exp() + 1.0);
        let s = state(2, &[1], &[q0, q1]);
        assert!((update_probability(0, &s, &t, &wf) - cond_with_1).abs() < 1e-12);
        let s = state(2, &[0, 1], &[q0, q1]);
        assert!((update_probability(0, &s, &t, &wf) - cond_with_1).abs() < 1e-12);
        let s = state(2, &[], &[q0, q1]);
        assert!((update_probability(0, &s, &t, &wf) - cond_alone).abs() < 1e-12);
    }

    #[test]
    fn log_space_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = crate::topology::NetworkParams { side_length: 5.0, ..Default::default() };
        let t = Topology::uniform(NetworkConfig::new(p).unwrap(), 7, &mut rng);
        let wf = WeightFunction::<f64>::log01x();
        for mask in 0..128u64 {
            let queues: Vec<u64> = (0..7).map(|_| rng.gen_range(0..20_000)).collect();
            let s = ScheduleState::new(LinkSet::from_mask(7, mask), queues).unwrap();
            for i in 0..7 {
                let a = update_probability(i, &s, &t, &wf);
                let b = update_probability_naive(i, &s, &t, &wf).unwrap();
                assert!((a - b).abs() < 1e-12);
                assert!(a > 0.0 && a < 1.0);
            }
        }
    }

    #[test]
    fn probability_increases_with_own_queue() {
        let t = line(&[0.0, 1.0, 2.5]);
        let wf = WeightFunction::log01x();
        let mut prev = 0.0;
        for q in [1u64, 10, 30, 100, 1000, 10_000] {
            let s = state(3, &[1, 2], &[q, 500, 50]);
            let p = update_probability(0, &s, &t, &wf);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn single_site_update_touches_only_i() {
        let t = line(&[0.0, 1.0, 2.0, 3.0]);
        let wf = WeightFunction::log01x();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = state(4, &[0, 3], &[5, 5, 5, 5]);
        for _ in 0..200 {
            let before = s.clone();
            single_site_update(&mut s, 1, &t, &wf, &mut rng);
            for k in [0, 2, 3] {
                assert_eq!(s.active.contains(k), before.active.contains(k));
            }
            assert_eq!(s.queues, before.queues);
        }
    }

    #[test]
    fn huge_queue_turns_link_on() {
        let t = line(&[0.0, 10.0]);
        let wf = WeightFunction::log01x();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = state(2, &[], &[10_000, 0]);
        // p = 1000/1001
        let on = (0..100_000).filter(|_| single_site_update(&mut s, 0, &t, &wf, &mut rng)).count();
        assert!(on as f64 / 1e5 > 0.997);
    }

    #[test]
    fn uniform_pick() {
        let t1 = line(&[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!((0..100).all(|_| pick_uniform_link(&t1, &mut rng).unwrap() == 0));
        let empty = line(&[]);
        assert!(matches!(pick_uniform_link(&empty, &mut rng), Err(Error::EmptyTopology)));
        let t4 = line(&[0.0, 5.0, 10.0, 15.0]);
        let mut counts = [0usize; 4];
        let n = 1_000_000;
        for _ in 0..n {
            counts[pick_uniform_link(&t4, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((0.2485..=0.2515).contains(&f), "{f}");
        }
        let a: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(1);
            (0..20).map(|_| pick_uniform_link(&t4, &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = ChaCha8Rng::seed_from_u64(1);
            (0..20).map(|_| pick_uniform_link(&t4, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
