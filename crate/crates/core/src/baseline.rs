//! Conflict-graph CSMA: Glauber dynamics of the hardcore model on the conflict graph.
//! Two links conflict when they lie within the close-in radius of each other, which is the
//! same relation as the neighbour sets of [`Topology`].

use rand::Rng;

use crate::channel::{draw_fading, realized_success, required_pairs};
use crate::error::Result;
use crate::glauber::{weight_g, ScheduleState, WeightFunction};
use crate::linkset::LinkSet;
use crate::scalar::{logistic, Scalar};
use crate::schedule::check_decision_schedule;
use crate::topology::Topology;

pub fn is_independent_set<T: Scalar>(topology: &Topology<T>, set: &LinkSet) -> bool {
    set.iter().all(|i| topology.neighbours(i).iter().all(|&j| !set.contains(j)))
}

/// Probability that `i` is on after its update: 0 when a conflict neighbour is active,
/// otherwise `e^{g(q_i)} / (1 + e^{g(q_i)})`.
pub fn graph_activation_probability<T: Scalar>(
    i: usize,
    state: &ScheduleState,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
) -> T {
    if topology.neighbours(i).iter().any(|&j| state.active.contains(j)) {
        T::zero()
    } else {
        logistic(weight_g(state.queues[i], wf))
    }
}

pub fn graph_single_site_update<T: Scalar, R: Rng + ?Sized>(
    state: &mut ScheduleState,
    i: usize,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
    rng: &mut R,
) -> bool {
    debug_assert!(is_independent_set(topology, &state.active));
    let p = graph_activation_probability(i, state, topology, wf);
    // Always consume one coin so that streams stay aligned across states.
    let u = T::sample_open01(rng);
    let on = u < p;
    state.active.set(i, on);
    on
}

/// Simultaneous hardcore updates over a decision schedule, evaluated on the common
/// pre-update state.
pub fn graph_parallel_update<T: Scalar, R: Rng + ?Sized>(
    state: &mut ScheduleState,
    decision: &LinkSet,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
    rng: &mut R,
) -> Result<()> {
    check_decision_schedule(topology, decision)?;
    let probs: Vec<(usize, T)> =
        decision.iter().map(|i| (i, graph_activation_probability(i, state, topology, wf))).collect();
    for (i, p) in probs {
        let on = T::sample_open01(rng) < p;
        state.active.set(i, on);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphService {
    /// Every transmitting link succeeds: independence implies no collisions.
    Deterministic,
    /// Each transmission is checked against the realized SIR from all other transmitters.
    RealizedSir,
}

/// Links among `transmitting` whose packet gets through in this data slot.
pub fn graph_service<T: Scalar, R: Rng + ?Sized>(
    topology: &Topology<T>,
    transmitting: &LinkSet,
    mode: GraphService,
    rng: &mut R,
) -> LinkSet {
    match mode {
        GraphService::Deterministic => transmitting.clone(),
        GraphService::RealizedSir => {
            let draw = draw_fading(rng, required_pairs(transmitting));
            LinkSet::from_ids(
                transmitting.n_links(),
                transmitting
                    .iter()
                    .filter(|&i| realized_success(topology, transmitting, i, &draw).expect("all pairs drawn")),
            )
        }
    }
}
