//! Exhaustive computations over all `2^N` link subsets for small instances.
//!
//! Subsets are encoded as integers with link `i` at bit `i`.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::channel::{counterfactual_rate, rate_vector, InterferenceMode, RateVector};
use crate::error::{Error, Result};
use crate::glauber::{update_probability, weight_g, ScheduleState, WeightFunction};
use crate::linkset::LinkSet;
use crate::scalar::{log_sum_exp, Scalar};
use crate::topology::{two_hop_closure, Topology};

/// Largest instance accepted by the distribution and max-weight routines.
pub const MAX_TABLE_LINKS: usize = 16;
/// Largest instance accepted by [`single_site_kernel`].
pub const MAX_KERNEL_LINKS: usize = 12;
/// Largest instance accepted by [`mrf_conditional_check`].
pub const MAX_MRF_LINKS: usize = 10;

fn guard(n: usize, limit: usize) -> Result<()> {
    if n > limit {
        Err(Error::TooLarge { n_links: n, limit })
    } else {
        Ok(())
    }
}

/// A probability mass over all subsets of `n_links` links.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable<T> {
    n_links: usize,
    masses: Vec<T>,
    log_z: T,
}

impl<T: Scalar> DistributionTable<T> {
    /// Normalizes unnormalized log-masses.
    pub fn from_log_weights(n_links: usize, log_weights: Vec<T>) -> Self {
        assert_eq!(log_weights.len(), 1 << n_links);
        let log_z = log_sum_exp(&log_weights);
        let masses = log_weights.iter().map(|&lw| (lw - log_z).exp()).collect();
        Self { n_links, masses, log_z }
    }

    /// Normalizes nonnegative counts or weights. `log_z` is the log of their sum.
    pub fn from_weights(n_links: usize, weights: Vec<T>) -> Self {
        assert_eq!(weights.len(), 1 << n_links);
        let total = weights.iter().fold(T::zero(), |a, &b| a + b);
        let masses = weights.iter().map(|&w| w / total).collect();
        Self { n_links, masses, log_z: total.ln() }
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn mass(&self, mask: u64) -> T {
        self.masses[mask as usize]
    }

    pub fn log_z(&self) -> T {
        self.log_z
    }

    /// Largest-mass subset; ties go to the smallest encoding.
    pub fn argmax(&self) -> u64 {
        let mut best = 0;
        for (k, &m) in self.masses.iter().enumerate() {
            if m > self.masses[best] {
                best = k;
            }
        }
        best as u64
    }

    /// `# n_links`/`# log_z` header then one `mask mass` line per subset.
    pub fn export<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# n_links = {}", self.n_links)?;
        writeln!(w, "# log_z = {}", self.log_z)?;
        for (k, m) in self.masses.iter().enumerate() {
            writeln!(w, "{k} {m}")?;
        }
        Ok(())
    }

    pub fn import<R: BufRead>(reader: R) -> Result<Self> {
        let mut n_links = None;
        let mut log_z = T::nan();
        let mut masses = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let perr = |message: String| Error::Parse { line: k + 1, message };
            let line = line.map_err(|e| perr(e.to_string()))?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.split_once('=') {
                    match key.trim() {
                        "n_links" => n_links = Some(value.trim().parse().map_err(|_| perr("bad n_links".into()))?),
                        "log_z" => log_z = value.trim().parse().map_err(|_| perr("bad log_z".into()))?,
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (idx, mass) = line.split_once(' ').ok_or_else(|| perr(format!("expected `mask mass`: {line:?}")))?;
            let idx: usize = idx.parse().map_err(|_| perr(format!("bad mask {idx:?}")))?;
            if idx != masses.len() {
                return Err(perr(format!("masks must be consecutive, got {idx}")));
            }
            masses.push(mass.trim().parse::<T>().map_err(|_| perr(format!("bad mass {mass:?}")))?);
        }
        let n_links: usize = n_links.ok_or_else(|| Error::Parse { line: 0, message: "missing n_links".into() })?;
        if masses.len() != 1usize << n_links {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected {} rows, got {}", 1usize << n_links, masses.len()),
            });
        }
        Ok(Self { n_links, masses, log_z })
    }
}

/// `sum_{j in M} mu_j(M) g(q_j)` with close-in success probabilities.
pub fn gibbs_exponent<T: Scalar>(topology: &Topology<T>, set: &LinkSet, queues: &[u64], wf: &WeightFunction<T>) -> T {
    set.iter().fold(T::zero(), |acc, j| {
        acc + counterfactual_rate(topology, set, j, InterferenceMode::CloseIn) * weight_g(queues[j], wf)
    })
}

/// The Gibbs measure `Pi(M) = exp(sum_{j in M} mu_j(M) g(q_j)) / Z` over all subsets.
pub fn stationary_distribution<T: Scalar>(
    topology: &Topology<T>,
    queues: &[u64],
    wf: &WeightFunction<T>,
) -> Result<DistributionTable<T>> {
    let n = topology.n_links();
    guard(n, MAX_TABLE_LINKS)?;
    let log_w = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| gibbs_exponent(topology, &LinkSet::from_mask(n, mask), queues, wf))
        .collect();
    Ok(DistributionTable::from_log_weights(n, log_w))
}

/// Hardcore measure on independent sets of the conflict graph, `~ exp(sum_{j in M} g(q_j))`;
/// dependent sets carry zero mass.
pub fn hardcore_distribution<T: Scalar>(
    topology: &Topology<T>,
    queues: &[u64],
    wf: &WeightFunction<T>,
) -> Result<DistributionTable<T>> {
    let n = topology.n_links();
    guard(n, MAX_TABLE_LINKS)?;
    let log_w = (0..1u64 << n)
        .map(|mask| {
            let set = LinkSet::from_mask(n, mask);
            if crate::baseline::is_independent_set(topology, &set) {
                set.iter().fold(T::zero(), |a, j| a + weight_g(queues[j], wf))
            } else {
                T::neg_infinity()
            }
        })
        .collect();
    Ok(DistributionTable::from_log_weights(n, log_w))
}

/// Row-stochastic transition matrix over subsets, stored by rows of nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel<T> {
    n_links: usize,
    rows: Vec<Vec<(u64, T)>>,
}

impl<T: Scalar> TransitionKernel<T> {
    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn get(&self, from: u64, to: u64) -> T {
        self.rows[from as usize].iter().find(|(y, _)| *y == to).map_or(T::zero(), |&(_, p)| p)
    }

    pub fn row(&self, from: u64) -> &[(u64, T)] {
        &self.rows[from as usize]
    }

    /// Largest `|sum_y P(x, y) - 1|`.
    pub fn max_row_defect(&self) -> T {
        self.rows
            .iter()
            .map(|r| (r.iter().fold(T::zero(), |a, &(_, p)| a + p) - T::one()).abs())
            .fold(T::zero(), T::max)
    }

    /// `|| Pi P - Pi ||_1`.
    pub fn stationarity_residual(&self, pi: &DistributionTable<T>) -> T {
        let mut next = vec![T::zero(); self.n_states()];
        for (x, row) in self.rows.iter().enumerate() {
            let m = pi.masses[x];
            for &(y, p) in row {
                next[y as usize] = next[y as usize] + m * p;
            }
        }
        next.iter().zip(&pi.masses).fold(T::zero(), |a, (&u, &v)| a + (u - v).abs())
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.n_states();
        let mut d = vec![vec![T::zero(); n]; n];
        for (x, row) in self.rows.iter().enumerate() {
            for &(y, p) in row {
                d[x][y as usize] = p;
            }
        }
        d
    }
}

/// Kernel of "pick a link uniformly, set it on with probability `rule(i, state)`".
pub fn kernel_from_update_rule<T, F>(n_links: usize, queues: &[u64], rule: F) -> Result<TransitionKernel<T>>
where
    T: Scalar,
    F: Fn(usize, &ScheduleState) -> T + Sync,
{
    guard(n_links, MAX_KERNEL_LINKS)?;
    if n_links == 0 {
        return Ok(TransitionKernel { n_links, rows: vec![vec![(0, T::one())]] });
    }
    let inv_n = T::one() / T::from_usize(n_links).expect("small count");
    let rows = (0..1u64 << n_links)
        .into_par_iter()
        .map(|x| {
            let state = ScheduleState { active: LinkSet::from_mask(n_links, x), queues: queues.to_vec() };
            let mut row: Vec<(u64, T)> = Vec::with_capacity(n_links + 1);
            let mut add = |y: u64, p: T| match row.iter_mut().find(|(z, _)| *z == y) {
                Some(e) => e.1 = e.1 + p,
                None => row.push((y, p)),
            };
            for i in 0..n_links {
                let p = rule(i, &state);
                add(x | 1 << i, p * inv_n);
                add(x & !(1 << i), (T::one() - p) * inv_n);
            }
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    Ok(TransitionKernel { n_links, rows })
}

/// Transition kernel of the single-site chain built from the implemented update probability.
pub fn single_site_kernel<T: Scalar>(
    topology: &Topology<T>,
    queues: &[u64],
    wf: &WeightFunction<T>,
) -> Result<TransitionKernel<T>> {
    kernel_from_update_rule(topology.n_links(), queues, |i, s| update_probability(i, s, topology, wf))
}

/// `max_{x,y} |Pi(x) P(x,y) - Pi(y) P(y,x)|`.
pub fn verify_detailed_balance<T: Scalar>(pi: &DistributionTable<T>, kernel: &TransitionKernel<T>) -> T {
    assert_eq!(pi.masses.len(), kernel.n_states(), "distribution and kernel sizes differ");
    let mut worst = T::zero();
    for (x, row) in kernel.rows.iter().enumerate() {
        for &(y, p_xy) in row {
            let p_yx = kernel.get(y, x as u64);
            let r = (pi.masses[x] * p_xy - pi.masses[y as usize] * p_yx).abs();
            worst = worst.max(r);
        }
    }
    worst
}

/// Histogram of the states returned by `step` after discarding the first `burn_in`.
pub fn empirical_distribution<T, F>(n_links: usize, slots: usize, burn_in: usize, mut step: F) -> DistributionTable<T>
where
    T: Scalar,
    F: FnMut() -> u64,
{
    assert!(slots > burn_in, "slots must exceed burn-in");
    let mut counts = vec![0u64; 1 << n_links];
    for t in 0..slots {
        let state = step();
        if t >= burn_in {
            counts[state as usize] += 1;
        }
    }
    DistributionTable::from_weights(n_links, counts.into_iter().map(|c| T::from_u64(c).expect("count")).collect())
}

/// Half the L1 distance between two tables over the same links.
pub fn tv_distance<T: Scalar>(a: &DistributionTable<T>, b: &DistributionTable<T>) -> T {
    assert_eq!(a.masses.len(), b.masses.len(), "tables over different link counts");
    a.masses.iter().zip(&b.masses).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs()) * T::lit(0.5)
}

/// For every link `i`, evaluates the update probability on all `2^N` configurations and
/// compares configurations that agree on the two-hop closure of `i`. Returns the largest
/// absolute difference seen, which is exactly zero when the dependence is local.
pub fn mrf_conditional_check<T: Scalar>(topology: &Topology<T>, queues: &[u64], wf: &WeightFunction<T>) -> Result<T> {
    let n = topology.n_links();
    guard(n, MAX_MRF_LINKS)?;
    let worst = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep = two_hop_closure(topology, i).iter().fold(0u64, |m, &j| m | 1 << j);
            let mut reference: Vec<Option<T>> = vec![None; 1 << n];
            let mut worst = T::zero();
            for mask in 0..1u64 << n {
                let state = ScheduleState { active: LinkSet::from_mask(n, mask), queues: queues.to_vec() };
                let p = update_probability(i, &state, topology, wf);
                let key = (mask & keep) as usize;
                match reference[key] {
                    None => reference[key] = Some(p),
                    Some(r) => worst = worst.max((p - r).abs()),
                }
            }
            worst
        })
        .reduce(T::zero, T::max);
    Ok(worst)
}

/// Exhaustive max-weight schedule `argmax_M sum_{j in M} mu_j(M) w_j`, with `w_j = g(q_j)`
/// when a weight function is given and `w_j = q_j` otherwise. Ties go to the smallest
/// encoding.
pub fn max_weight_schedule<T: Scalar>(
    topology: &Topology<T>,
    queues: &[u64],
    wf: Option<&WeightFunction<T>>,
) -> Result<LinkSet> {
    let n = topology.n_links();
    guard(n, MAX_TABLE_LINKS)?;
    let weights: Vec<T> = queues
        .iter()
        .map(|&q| match wf {
            Some(wf) => weight_g(q, wf),
            None => T::from_u64(q).expect("queue fits"),
        })
        .collect();
    let mut best = (T::neg_infinity(), 0u64);
    for mask in 0..1u64 << n {
        let set = LinkSet::from_mask(n, mask);
        let value = set.iter().fold(T::zero(), |acc, j| {
            acc + counterfactual_rate(topology, &set, j, InterferenceMode::CloseIn) * weights[j]
        });
        if value > best.0 {
            best = (value, mask);
        }
    }
    Ok(LinkSet::from_mask(n, best.1))
}

/// Rate vectors of every subset, indexed by encoding.
pub fn rate_vectors<T: Scalar>(topology: &Topology<T>, mode: InterferenceMode) -> Result<Vec<RateVector<T>>> {
    let n = topology.n_links();
    guard(n, MAX_TABLE_LINKS)?;
    Ok((0..1u64 << n).map(|mask| rate_vector(topology, &LinkSet::from_mask(n, mask), mode)).collect())
}
