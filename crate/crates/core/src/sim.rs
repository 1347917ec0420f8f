//! Slotted queueing simulation.
//!
//! Every slot runs, in this order: a control slot (status updates), a data slot (service of
//! backlogged active links) and Bernoulli arrivals. Packets arriving in slot `t` can be
//! served from slot `t + 1` on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{graph_parallel_update, graph_single_site_update, is_independent_set};
use crate::channel::{counterfactual_rate, draw_fading, realized_success, required_pairs, InterferenceMode};
use crate::error::{Error, Result};
use crate::glauber::{pick_uniform_link, single_site_update, ScheduleState, WeightFunction};
use crate::linkset::LinkSet;
use crate::scalar::Scalar;
use crate::schedule::{parallel_update_unchecked, run_decision_protocol, ProtocolConfig};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    /// Spatial CSMA on the SIR model.
    Sir,
    /// Hardcore CSMA on the conflict graph.
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateMode {
    /// One uniformly chosen link per control slot.
    Single,
    /// Decision-schedule protocol, then simultaneous updates.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServiceMode {
    /// Departure with probability `mu_i` over all transmitting links.
    Analytic,
    /// Fading drawn every slot, departure iff the SIR clears the threshold.
    Realized,
    /// Every transmission succeeds. Conflict-graph model only.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalRates<T> {
    Homogeneous(T),
    PerLink(Vec<T>),
}

impl<T: Scalar> ArrivalRates<T> {
    /// Expected packets arriving per slot across all links.
    pub fn offered_load(&self, n_links: usize) -> Result<f64> {
        Ok(self.resolve(n_links)?.iter().map(|a| a.as_f64()).sum())
    }

    fn resolve(&self, n_links: usize) -> Result<Vec<T>> {
        let rates = match self {
            Self::Homogeneous(a) => vec![*a; n_links],
            Self::PerLink(v) if v.len() == n_links => v.clone(),
            Self::PerLink(v) => {
                return Err(Error::InvalidConfig(format!("{} arrival rates for {n_links} links", v.len())))
            }
        };
        if let Some(a) = rates.iter().find(|&&a| !(a >= T::zero() && a < T::one())) {
            return Err(Error::InvalidConfig(format!("arrival rate {a} outside [0, 1)")));
        }
        Ok(rates)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec<T> {
    pub model: Model,
    pub update_mode: UpdateMode,
    pub service_mode: ServiceMode,
    pub arrivals: ArrivalRates<T>,
    pub horizon: usize,
    pub seed: u64,
    pub protocol: ProtocolConfig,
    pub weight: WeightFunction<T>,
    /// `q(0)`; all zero when absent.
    pub initial_queues: Option<Vec<u64>>,
    /// `M(0)`; empty when absent.
    pub initial_active: Option<LinkSet>,
    /// Skip the control slot so the active set stays at `M(0)`.
    pub pin_schedule: bool,
}

impl<T: Scalar> RunSpec<T> {
    /// Default service for each model: realized fading for SIR, collision-free for the graph.
    pub fn new(model: Model, arrival_rate: T) -> Self {
        Self {
            model,
            update_mode: UpdateMode::Single,
            service_mode: match model {
                Model::Sir => ServiceMode::Realized,
                Model::Graph => ServiceMode::Deterministic,
            },
            arrivals: ArrivalRates::Homogeneous(arrival_rate),
            horizon: 200_000,
            seed: 1,
            protocol: ProtocolConfig::default(),
            weight: WeightFunction::log01x(),
            initial_queues: None,
            initial_active: None,
            pin_schedule: false,
        }
    }

    pub fn validate(&self, n_links: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.model == Model::Sir && self.service_mode == ServiceMode::Deterministic {
            return Err(Error::InvalidConfig("deterministic service is only defined for the graph model".into()));
        }
        self.arrivals.resolve(n_links)?;
        if let Some(q) = &self.initial_queues {
            if q.len() != n_links {
                return Err(Error::InvalidConfig(format!("{} initial queues for {n_links} links", q.len())));
            }
        }
        if let Some(m) = &self.initial_active {
            if m.n_links() != n_links {
                return Err(Error::InvalidConfig(format!("initial active set over {} links", m.n_links())));
            }
        }
        Ok(())
    }
}

/// Per-slot and per-link records of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries<T> {
    /// `sum_i q_i(t)` for `t = 0..=horizon`; entry 0 is the initial backlog.
    pub total_queue: Vec<u64>,
    pub initial_queues: Vec<u64>,
    /// `sum_{t=1}^{horizon} q_i(t)`.
    pub queue_time_sum: Vec<u64>,
    pub departures: Vec<u64>,
    pub arrivals: Vec<u64>,
    /// Number of links allowed to update in each control slot.
    pub decision_sizes: Vec<u32>,
    /// Mean over transmitting links of (close-in rate - all-links rate), zero when idle.
    pub success_gap: Vec<T>,
}

impl<T: Scalar> MetricsSeries<T> {
    fn new(n_links: usize, initial: &[u64], horizon: usize) -> Self {
        let mut total_queue = Vec::with_capacity(horizon + 1);
        total_queue.push(initial.iter().sum());
        Self {
            total_queue,
            initial_queues: initial.to_vec(),
            queue_time_sum: vec![0; n_links],
            departures: vec![0; n_links],
            arrivals: vec![0; n_links],
            decision_sizes: Vec::with_capacity(horizon),
            success_gap: Vec::with_capacity(horizon),
        }
    }

    pub fn slots(&self) -> usize {
        self.total_queue.len() - 1
    }

    pub fn time_average_link_queues(&self) -> Vec<f64> {
        let s = self.slots().max(1) as f64;
        self.queue_time_sum.iter().map(|&x| x as f64 / s).collect()
    }

    /// Queues reconstructed from the ledger: `q(0) + arrivals - departures`.
    pub fn reconstructed_queues(&self) -> Vec<u64> {
        self.initial_queues.iter().zip(&self.arrivals).zip(&self.departures).map(|((&q, &a), &d)| q + a - d).collect()
    }
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotReport {
    pub slot: usize,
    pub updated: LinkSet,
    pub served: LinkSet,
    pub arrived: LinkSet,
}

/// Derives independent streams from one seed: stream 0 drives control decisions, 1 the data
/// slot, 2 the arrivals.
fn streams(seed: u64) -> [ChaCha8Rng; 3] {
    let mk = |s| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(s);
        r
    };
    [mk(0), mk(1), mk(2)]
}

/// Seed of run `index` within a batch started from `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Simulation<'a, T: Scalar> {
    topology: &'a Topology<T>,
    spec: RunSpec<T>,
    rates: Vec<T>,
    state: ScheduleState,
    slot: usize,
    control_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
    arrival_rng: ChaCha8Rng,
    metrics: MetricsSeries<T>,
}

impl<'a, T: Scalar> Simulation<'a, T> {
    pub fn new(topology: &'a Topology<T>, spec: RunSpec<T>) -> Result<Self> {
        let n = topology.n_links();
        spec.validate(n)?;
        let rates = spec.arrivals.resolve(n)?;
        let queues = spec.initial_queues.clone().unwrap_or_else(|| vec![0; n]);
        let active = spec.initial_active.clone().unwrap_or_else(|| LinkSet::empty(n));
        if spec.model == Model::Graph && !is_independent_set(topology, &active) {
            return Err(Error::InvalidConfig("initial active set is not independent in the conflict graph".into()));
        }
        let [control_rng, service_rng, arrival_rng] = streams(spec.seed);
        let metrics = MetricsSeries::new(n, &queues, spec.horizon);
        Ok(Self {
            topology,
            spec,
            rates,
            state: ScheduleState { active, queues },
            slot: 0,
            control_rng,
            service_rng,
            arrival_rng,
            metrics,
        })
    }

    pub fn state(&self) -> &ScheduleState {
        &self.state
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn metrics(&self) -> &MetricsSeries<T> {
        &self.metrics
    }

    pub fn into_metrics(self) -> MetricsSeries<T> {
        self.metrics
    }

    fn control(&mut self) -> LinkSet {
        let topo = self.topology;
        let n = topo.n_links();
        let wf = &self.spec.weight;
        if n == 0 || self.spec.pin_schedule {
            return LinkSet::empty(n);
        }
        let rng = &mut self.control_rng;
        match self.spec.update_mode {
            UpdateMode::Single => {
                let i = pick_uniform_link(topo, rng).expect("non-empty");
                match self.spec.model {
                    Model::Sir => {
                        single_site_update(&mut self.state, i, topo, wf, rng);
                    }
                    Model::Graph => {
                        graph_single_site_update(&mut self.state, i, topo, wf, rng);
                    }
                }
                LinkSet::from_ids(n, [i])
            }
            UpdateMode::Parallel => {
                let d = run_decision_protocol(topo, &self.spec.protocol, rng);
                let members = d.members().clone();
                match self.spec.model {
                    Model::Sir => parallel_update_unchecked(&mut self.state, &members, topo, wf, rng),
                    Model::Graph => graph_parallel_update(&mut self.state, &members, topo, wf, rng)
                        .expect("protocol output is a valid decision schedule"),
                }
                members
            }
        }
    }

    fn serve(&mut self) -> LinkSet {
        let topo = self.topology;
        let n = topo.n_links();
        let transmitting = LinkSet::from_ids(n, self.state.active.iter().filter(|&i| self.state.queues[i] > 0));
        let gap = if transmitting.is_empty() {
            T::zero()
        } else {
            let sum = transmitting.iter().fold(T::zero(), |acc, i| {
                acc + counterfactual_rate(topo, &transmitting, i, InterferenceMode::CloseIn)
                    - counterfactual_rate(topo, &transmitting, i, InterferenceMode::AllLinks)
            });
            sum / T::from_usize(transmitting.len()).expect("small count")
        };
        self.metrics.success_gap.push(gap);
        let rng = &mut self.service_rng;
        match self.spec.service_mode {
            ServiceMode::Deterministic => transmitting,
            ServiceMode::Analytic => {
                let served = transmitting.iter().filter(|&i| {
                    let mu = counterfactual_rate(topo, &transmitting, i, InterferenceMode::AllLinks);
                    T::sample_open01(rng) < mu
                });
                LinkSet::from_ids(n, served.collect::<Vec<_>>())
            }
            ServiceMode::Realized => {
                let draw = draw_fading(rng, required_pairs(&transmitting));
                let served = transmitting
                    .iter()
                    .filter(|&i| realized_success(topo, &transmitting, i, &draw).expect("all pairs drawn"));
                LinkSet::from_ids(n, served.collect::<Vec<_>>())
            }
        }
    }

    /// Advances one slot: control, service, arrivals.
    pub fn step(&mut self) -> SlotReport {
        let updated = self.control();
        if self.spec.model == Model::Graph {
            debug_assert!(is_independent_set(self.topology, &self.state.active));
        }
        self.metrics.decision_sizes.push(updated.len() as u32);

        let served = self.serve();
        for i in served.iter() {
            self.state.queues[i] -= 1;
            self.metrics.departures[i] += 1;
        }

        let n = self.topology.n_links();
        let mut arrived = LinkSet::empty(n);
        for i in 0..n {
            // one draw per link per slot keeps the arrival stream identical across models
            if T::sample_open01(&mut self.arrival_rng) < self.rates[i] {
                arrived.insert(i);
                self.state.queues[i] += 1;
                self.metrics.arrivals[i] += 1;
            }
        }

        for (acc, &q) in self.metrics.queue_time_sum.iter_mut().zip(&self.state.queues) {
            *acc += q;
        }
        self.metrics.total_queue.push(self.state.total_queue());
        self.slot += 1;
        SlotReport { slot: self.slot, updated, served, arrived }
    }

    /// Runs until the configured horizon.
    pub fn run_to_end(mut self) -> MetricsSeries<T> {
        while self.slot < self.spec.horizon {
            self.step();
        }
        self.metrics
    }
}

pub fn run<T: Scalar>(topology: &Topology<T>, spec: RunSpec<T>) -> Result<MetricsSeries<T>> {
    Ok(Simulation::new(topology, spec)?.run_to_end())
}

/// Least-squares slope of `ys` against their index.
pub fn ols_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, &y) in ys.iter().enumerate() {
        let dx = k as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Long-run summary of one total-queue series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueSummary {
    /// Mean total queue over the final half of the horizon.
    pub mean_total_queue: f64,
    /// The same divided by the number of links.
    pub mean_link_queue: f64,
    /// Slope of the total queue over the final half, packets per slot, fitted to block means.
    pub trend_slope: f64,
    /// t statistic of that slope against the scatter of the block means.
    pub trend_t: f64,
    /// `trend_slope` as a fraction of the offered load (packets arriving per slot).
    pub drift_fraction: f64,
    pub stable: bool,
}

/// Number of blocks the final half is cut into for the trend fit.
pub const TREND_BLOCKS: usize = 10;
/// Significance a positive trend needs before a run can be called unstable.
pub const INSTABILITY_T: f64 = 2.0;
/// Smallest drift, relative to the offered load, that counts as unstable. Slow transients
/// of stable runs stay around 1e-3.
pub const INSTABILITY_DRIFT: f64 = 2e-3;

/// `offered_load` is the summed arrival rate. A run is unstable when the block-mean trend
/// is both significant and a non-negligible share of the load.
pub fn summarize(total_queue: &[u64], n_links: usize, offered_load: f64) -> QueueSummary {
    let series = &total_queue[1.min(total_queue.len())..];
    let half = &series[series.len() / 2..];
    let mean_total = if half.is_empty() { 0.0 } else { half.iter().sum::<u64>() as f64 / half.len() as f64 };
    let bs = half.len() / TREND_BLOCKS;
    let (slope, t) = if bs == 0 {
        (0.0, 0.0)
    } else {
        let means: Vec<f64> =
            half.chunks_exact(bs).take(TREND_BLOCKS).map(|c| c.iter().sum::<u64>() as f64 / bs as f64).collect();
        let b = ols_slope(&means);
        let k = means.len() as f64;
        let (mx, my) = ((k - 1.0) / 2.0, means.iter().sum::<f64>() / k);
        let sxx: f64 = (0..means.len()).map(|i| (i as f64 - mx).powi(2)).sum();
        let rss: f64 = means.iter().enumerate().map(|(i, &y)| (y - my - b * (i as f64 - mx)).powi(2)).sum();
        let se = (rss / (k - 2.0) / sxx).sqrt();
        let t = if se > 0.0 {
            b / se
        } else if b > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        (b / bs as f64, t)
    };
    let drift = if offered_load > 0.0 { slope / offered_load } else { 0.0 };
    QueueSummary {
        mean_total_queue: mean_total,
        mean_link_queue: if n_links == 0 { 0.0 } else { mean_total / n_links as f64 },
        trend_slope: slope,
        trend_t: t,
        drift_fraction: drift,
        stable: !(t > INSTABILITY_T && drift > INSTABILITY_DRIFT),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rate: f64,
    pub replication: usize,
    pub seed: u64,
    pub topology_fingerprint: u64,
    pub summary: QueueSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub rate: f64,
    pub mean_total_queue: f64,
    pub std_total_queue: f64,
    pub mean_link_queue: f64,
    pub stable_fraction: f64,
}

/// Runs `template` at each arrival rate, `replications` times, on one topology. Run
/// `k` (rate-major order) uses seed `derive_seed(template.seed, k)`.
pub fn run_sweep<T: Scalar>(
    topology: &Topology<T>,
    template: &RunSpec<T>,
    rates: &[T],
    replications: usize,
) -> Result<Vec<SweepRow>> {
    if rates.is_empty() {
        return Err(Error::InvalidConfig("empty arrival-rate grid".into()));
    }
    if replications == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }
    let fingerprint = topology.fingerprint();
    let jobs: Vec<(usize, T, usize)> = rates
        .iter()
        .enumerate()
        .flat_map(|(k, &r)| (0..replications).map(move |rep| (k * replications + rep, r, rep)))
        .collect();
    jobs.into_par_iter()
        .map(|(index, rate, replication)| {
            let mut spec = template.clone();
            spec.arrivals = ArrivalRates::Homogeneous(rate);
            spec.seed = derive_seed(template.seed, index as u64);
            let seed = spec.seed;
            let load = spec.arrivals.offered_load(topology.n_links())?;
            let m = run(topology, spec)?;
            Ok(SweepRow {
                rate: rate.as_f64(),
                replication,
                seed,
                topology_fingerprint: fingerprint,
                summary: summarize(&m.total_queue, topology.n_links(), load),
            })
        })
        .collect()
}

/// Mean and sample standard deviation across replications, per rate, in grid order.
pub fn aggregate_sweep(rows: &[SweepRow]) -> Vec<SweepPoint> {
    let mut rates: Vec<f64> = Vec::new();
    for r in rows {
        if !rates.contains(&r.rate) {
            rates.push(r.rate);
        }
    }
    rates
        .into_iter()
        .map(|rate| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.rate == rate).collect();
            let n = group.len() as f64;
            let mean = group.iter().map(|r| r.summary.mean_total_queue).sum::<f64>() / n;
            let var = if group.len() > 1 {
                group.iter().map(|r| (r.summary.mean_total_queue - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SweepPoint {
                rate,
                mean_total_queue: mean,
                std_total_queue: var.sqrt(),
                mean_link_queue: group.iter().map(|r| r.summary.mean_link_queue).sum::<f64>() / n,
                stable_fraction: group.iter().filter(|r| r.summary.stable).count() as f64 / n,
            }
        })
        .collect()
}

/// Total-queue trajectories of both models on the same topology, seed and arrival stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSeries {
    pub sir: Vec<u64>,
    pub graph: Vec<u64>,
}

/// `sir_spec` and `graph_spec` share `seed`, horizon and arrivals; only the model fields of
/// each are used.
pub fn run_convergence<T: Scalar>(
    topology: &Topology<T>,
    sir_spec: &RunSpec<T>,
    graph_spec: &RunSpec<T>,
) -> Result<ConvergenceSeries> {
    let mut graph_spec = graph_spec.clone();
    graph_spec.seed = sir_spec.seed;
    graph_spec.horizon = sir_spec.horizon;
    graph_spec.arrivals = sir_spec.arrivals.clone();
    graph_spec.initial_queues = sir_spec.initial_queues.clone();
    let (sir, graph) = rayon::join(|| run(topology, sir_spec.clone()), || run(topology, graph_spec));
    Ok(ConvergenceSeries { sir: sir?.total_queue, graph: graph?.total_queue })
}

/// First slot at which the series comes within `tolerance` (relative) of its final-quarter
/// mean.
pub fn time_to_steady_state(series: &[u64], tolerance: f64) -> Option<usize> {
    let len = series.len();
    if len < 4 {
        return None;
    }
    let tail = &series[len - len / 4..];
    let mean = tail.iter().sum::<u64>() as f64 / tail.len() as f64;
    series.iter().position(|&x| (x as f64 - mean).abs() <= tolerance * mean)
}
