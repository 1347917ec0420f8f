//! Link success probabilities under Rayleigh fading and realized SIR outcomes.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linkset::LinkSet;
use crate::scalar::Scalar;
use crate::topology::Topology;

/// Which active links count as interferers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterferenceMode {
    /// Only active links within the close-in radius. This is what a link can compute locally.
    CloseIn,
    /// Every other active link.
    AllLinks,
}

/// Success probability that link `j` would see if it transmitted while the links of `set`
/// (other than `j`) are active. `j`'s own membership is ignored.
pub fn counterfactual_rate<T: Scalar>(topology: &Topology<T>, set: &LinkSet, j: usize, mode: InterferenceMode) -> T {
    match mode {
        InterferenceMode::CloseIn => topology
            .neighbours(j)
            .iter()
            .zip(topology.neighbour_gains(j))
            .filter(|(k, _)| set.contains(**k))
            .fold(T::one(), |acc, (_, &f)| acc * f),
        InterferenceMode::AllLinks => set.iter().filter(|&k| k != j).fold(T::one(), |acc, k| acc * topology.gain(j, k)),
    }
}

/// `mu_i(M)` for `i` in `M`: the product of `f(r_ij)` over active interferers.
pub fn success_probability<T: Scalar>(
    topology: &Topology<T>,
    set: &LinkSet,
    i: usize,
    mode: InterferenceMode,
) -> Result<T> {
    topology.check_link(i)?;
    if !set.contains(i) {
        return Err(Error::Contract(format!("link {i} is not in the active set {set}")));
    }
    Ok(counterfactual_rate(topology, set, i, mode))
}

/// `mu(M)`: entry `i` is the success probability of `i` when `i` is in `M`, zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector<T>(pub Vec<T>);

impl<T: Scalar> RateVector<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn sum(&self) -> T {
        self.0.iter().fold(T::zero(), |a, &b| a + b)
    }
}

pub fn rate_vector<T: Scalar>(topology: &Topology<T>, set: &LinkSet, mode: InterferenceMode) -> RateVector<T> {
    RateVector(
        (0..topology.n_links())
            .map(|i| if set.contains(i) { counterfactual_rate(topology, set, i, mode) } else { T::zero() })
            .collect(),
    )
}

/// One slot's fading powers `|h_ij|^2`, keyed by (receiver link, transmitter link).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FadingDraw<T> {
    gains: HashMap<(usize, usize), T>,
}

impl<T: Scalar> FadingDraw<T> {
    pub fn get(&self, receiver: usize, transmitter: usize) -> Option<T> {
        self.gains.get(&(receiver, transmitter)).copied()
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn insert(&mut self, receiver: usize, transmitter: usize, power: T) {
        self.gains.insert((receiver, transmitter), power);
    }
}

/// Independent unit-mean exponential power for each requested (receiver, transmitter) pair,
/// drawn in iteration order.
pub fn draw_fading<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    pairs: impl IntoIterator<Item = (usize, usize)>,
) -> FadingDraw<T> {
    let mut draw = FadingDraw::default();
    for (rx, tx) in pairs {
        draw.gains.insert((rx, tx), T::sample_exp1(rng));
    }
    draw
}

/// Every pair needed to evaluate the SIR of all members of `set` against all other members.
pub fn required_pairs(set: &LinkSet) -> Vec<(usize, usize)> {
    let members: Vec<usize> = set.iter().collect();
    let mut pairs = Vec::with_capacity(members.len() * members.len());
    for &i in &members {
        for &j in &members {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Whether the SIR of link `i` reaches the threshold when `set` transmits. Interference is
/// summed over every other active link; thermal noise is zero.
pub fn realized_success<T: Scalar>(
    topology: &Topology<T>,
    set: &LinkSet,
    i: usize,
    draw: &FadingDraw<T>,
) -> Result<bool> {
    topology.check_link(i)?;
    if !set.contains(i) {
        return Err(Error::Contract(format!("link {i} is not in the active set {set}")));
    }
    let missing = |tx| Error::MissingGain { receiver: i, transmitter: tx };
    let h_ii = draw.get(i, i).ok_or_else(|| missing(i))?;
    let cfg = topology.config();
    let alpha = cfg.path_loss_alpha();
    let mut interference = T::zero();
    for j in set.iter().filter(|&j| j != i) {
        let h = draw.get(i, j).ok_or_else(|| missing(j))?;
        interference = interference + h * topology.distance(i, j).powf(-alpha);
    }
    // gamma >= T  <=>  h_ii R^-alpha >= T * I, which also covers I = 0.
    Ok(h_ii * cfg.link_distance().powf(-alpha) >= cfg.sir_threshold_linear() * interference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{NetworkConfig, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn topo(pts: &[(f64, f64)]) -> Topology<f64> {
        let pos = pts.iter().map(|&(x, y)| Point { x, y }).collect();
        Topology::from_positions(NetworkConfig::default(), pos, vec![0.0; pts.len()]).unwrap()
    }

    fn random_topo(n: usize, side: f64, seed: u64) -> Topology<f64> {
        let p = crate::topology::NetworkParams { side_length: side, ..Default::default() };
        Topology::uniform(NetworkConfig::new(p).unwrap(), n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn singleton_always_succeeds() {
        let t = topo(&[(0.0, 0.0), (1.0, 0.0)]);
        let m = LinkSet::from_ids(2, [0]);
        for mode in [InterferenceMode::CloseIn, InterferenceMode::AllLinks] {
            assert_eq!(success_probability(&t, &m, 0, mode).unwrap(), 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = draw_fading(&mut rng, required_pairs(&m));
        assert!(realized_success(&t, &m, 0, &d).unwrap());
    }

    #[test]
    fn pair_of_neighbours_is_single_factor() {
        let t = topo(&[(0.0, 0.0), (1.5, 0.0)]);
        let m = LinkSet::full(2);
        let p = success_probability(&t, &m, 0, InterferenceMode::CloseIn).unwrap();
        assert_eq!(p, t.gain(0, 1));
    }

    #[test]
    fn not_in_set_is_contract_violation() {
        let t = topo(&[(0.0, 0.0), (1.5, 0.0)]);
        let m = LinkSet::from_ids(2, [1]);
        assert!(matches!(success_probability(&t, &m, 0, InterferenceMode::CloseIn), Err(Error::Contract(_))));
        assert!(success_probability(&t, &m, 7, InterferenceMode::CloseIn).is_err());
    }

    #[test]
    fn product_matches_independent_loop() {
        let t = random_topo(6, 6.0, 42);
        let m = LinkSet::from_ids(6, [0, 2, 3, 5]);
        let cfg = t.config();
        for i in m.iter() {
            let mut close = 1.0;
            let mut all = 1.0;
            for j in m.iter().filter(|&j| j != i) {
                let p = t.positions();
                let r = ((p[i].x - p[j].x).powi(2) + (p[i].y - p[j].y).powi(2)).sqrt();
                let f = 1.0 / (1.0 + (0.25 / r).powf(2.5) * cfg.sir_threshold_linear());
                all *= f;
                if r <= 4.0 {
                    close *= f;
                }
            }
            let c = success_probability(&t, &m, i, InterferenceMode::CloseIn).unwrap();
            let a = success_probability(&t, &m, i, InterferenceMode::AllLinks).unwrap();
            assert!((c - close).abs() < 1e-15);
            assert!((a - all).abs() < 1e-15);
            assert!(c >= a);
        }
    }

    #[test]
    fn rate_vector_zero_fill_exhaustive() {
        let t = random_topo(4, 5.0, 7);
        for mask in 0..16u64 {
            let m = LinkSet::from_mask(4, mask);
            for mode in [InterferenceMode::CloseIn, InterferenceMode::AllLinks] {
                let v = rate_vector(&t, &m, mode);
                for i in 0..4 {
                    if m.contains(i) {
                        assert_eq!(v.values()[i], success_probability(&t, &m, i, mode).unwrap());
                        assert!(v.values()[i] > 0.0 && v.values()[i] <= 1.0);
                        if t.neighbours(i).iter().all(|&j| !m.contains(j)) && mode == InterferenceMode::CloseIn {
                            assert_eq!(v.values()[i], 1.0);
                        }
                    } else {
                        assert_eq!(v.values()[i], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn far_apart_links_all_succeed() {
        let t = topo(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]);
        let v = rate_vector(&t, &LinkSet::full(3), InterferenceMode::CloseIn);
        assert_eq!(v.values(), &[1.0, 1.0, 1.0]);
        assert_eq!(rate_vector(&t, &LinkSet::empty(3), InterferenceMode::CloseIn).values(), &[0.0; 3]);
    }

    #[test]
    fn fading_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d: FadingDraw<f64> = draw_fading(&mut rng, [(0, 1)]);
            let g = d.get(0, 1).unwrap();
            assert!(g > 0.0);
            sum += g;
        }
        let mean = sum / n as f64;
        assert!((0.997..=1.003).contains(&mean), "mean {mean}");
        let empty: FadingDraw<f64> = draw_fading(&mut rng, std::iter::empty());
        assert!(empty.is_empty());
        let a: FadingDraw<f64> = draw_fading(&mut ChaCha8Rng::seed_from_u64(9), [(0, 0), (1, 0)]);
        let b: FadingDraw<f64> = draw_fading(&mut ChaCha8Rng::seed_from_u64(9), [(0, 0), (1, 0)]);
        assert_eq!(a, b);
    }

    #[test]
    fn one_interferer_threshold_rule() {
        let t = topo(&[(0.0, 0.0), (2.0, 0.0)]);
        let m = LinkSet::full(2);
        let tl = t.config().sir_threshold_linear();
        let h_ii = 1.3;
        let bound = h_ii * (2.0_f64 / 0.25).powf(2.5) / tl;
        for h_ij in [0.5 * bound, 0.999 * bound, 1.001 * bound, 3.0 * bound] {
            let mut d = FadingDraw::default();
            d.insert(0, 0, h_ii);
            d.insert(0, 1, h_ij);
            assert_eq!(realized_success(&t, &m, 0, &d).unwrap(), h_ij <= bound);
        }
        let mut d = FadingDraw::default();
        d.insert(0, 0, 1.0);
        assert!(matches!(realized_success(&t, &m, 0, &d), Err(Error::MissingGain { .. })));
    }

    #[test]
    fn monte_carlo_matches_all_links_product() {
        let t = random_topo(6, 4.0, 21);
        let m = LinkSet::from_ids(6, [0, 1, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let pairs = required_pairs(&m);
        let hits = (0..n)
            .filter(|_| realized_success(&t, &m, 1, &draw_fading(&mut rng, pairs.iter().copied())).unwrap())
            .count();
        let p = success_probability(&t, &m, 1, InterferenceMode::AllLinks).unwrap();
        let freq = hits as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sigma.max(1e-4), "freq {freq} vs {p}");
    }

    proptest::proptest! {
        #[test]
        fn adding_interferers_never_helps(seed in 0u64..500, base in 0u64..64, extra in 0u64..64) {
            let t = random_topo(6, 5.0, seed);
            let small = LinkSet::from_mask(6, base | 1);
            let large = LinkSet::from_mask(6, base | extra | 1);
            for mode in [InterferenceMode::CloseIn, InterferenceMode::AllLinks] {
                let a = success_probability(&t, &small, 0, mode).unwrap();
                let b = success_probability(&t, &large, 0, mode).unwrap();
                proptest::prop_assert!(b <= a);
            }
            let c = success_probability(&t, &large, 0, InterferenceMode::CloseIn).unwrap();
            let a = success_probability(&t, &large, 0, InterferenceMode::AllLinks).unwrap();
            proptest::prop_assert!(c >= a);
        }
    }
}
