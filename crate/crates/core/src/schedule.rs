//! Decision schedules: sets of links that may update simultaneously.
//!
//! A set `D` is valid when no member lies in the two-hop closure of another member, so no
//! member's update probability reads the status of another member. The distributed
//! protocol below builds such a set in `W + 2` control mini-slots:
//!
//! * mini-slots `1..=W`: each link joins the contest with the configured participation
//!   probability, waits a uniform backoff in `[0, W-1]` and sends INTENT
//!   unless it already heard a neighbour's INTENT; a collision with a neighbour in the same
//!   mini-slot disqualifies it. Survivors form `S`, an independent set of the conflict graph.
//! * mini-slot `W+1`: members of `S` repeat INTENT; a non-member hearing two or more of them
//!   senses a collision.
//! * mini-slot `W+2`: colliding non-members send DETECT; a member of `S` hearing any DETECT
//!   drops out. The rest is `D`.
//!
//! With every link contending, some topologies admit a link to `S` only together with a
//! two-hop neighbour that forces a DETECT, so that link never reaches `D` and the parallel
//! chain is reducible. Sitting out the contest at random restores a positive selection
//! probability for every link; `participation = 1.0` gives the all-contend variant.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::glauber::{update_probability, ScheduleState, WeightFunction};
use crate::linkset::LinkSet;
use crate::scalar::Scalar;
use crate::topology::{two_hop_closure, Topology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    backoff_window: u32,
    participation: f64,
}

impl ProtocolConfig {
    pub const DEFAULT_WINDOW: u32 = 32;

    pub const DEFAULT_PARTICIPATION: f64 = 0.3;

    pub fn new(backoff_window: u32) -> Result<Self> {
        Self::with_participation(backoff_window, Self::DEFAULT_PARTICIPATION)
    }

    /// `participation` is the probability that a link enters the backoff contest in a given
    /// control slot; `1.0` makes every link contend.
    pub fn with_participation(backoff_window: u32, participation: f64) -> Result<Self> {
        if backoff_window < 2 {
            return Err(Error::InvalidConfig(format!("backoff window W must be at least 2, got {backoff_window}")));
        }
        if !(participation > 0.0 && participation <= 1.0) {
            return Err(Error::InvalidConfig(format!("participation must lie in (0, 1], got {participation}")));
        }
        Ok(Self { backoff_window, participation })
    }

    /// `W`, the number of backoff mini-slots.
    pub fn backoff_window(&self) -> u32 {
        self.backoff_window
    }

    pub fn participation(&self) -> f64 {
        self.participation
    }

    pub fn minislots(&self) -> u32 {
        self.backoff_window + 2
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { backoff_window: Self::DEFAULT_WINDOW, participation: Self::DEFAULT_PARTICIPATION }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolEvent {
    /// Did not enter the backoff contest this control slot.
    Abstained,
    /// INTENT sent in the link's backoff mini-slot.
    IntentSent,
    /// INTENT collided with a neighbour's INTENT in the same mini-slot.
    IntentCollided,
    /// Heard a neighbour's INTENT before its own backoff expired.
    Deferred,
    /// Joined `S`.
    Selected,
    /// Repeated INTENT in mini-slot `W+1`.
    ConfirmSent,
    /// Non-member sensed a collision of confirmations in mini-slot `W+1`.
    CollisionHeard,
    /// DETECT sent in mini-slot `W+2`.
    DetectSent,
    /// Member of `S` heard a DETECT and dropped out.
    Dropped,
    /// Member of `S` kept in `D`.
    Admitted,
}

impl fmt::Display for ProtocolEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Abstained => "ABSTAIN",
            Self::IntentSent => "INTENT",
            Self::IntentCollided => "INTENT_COLLISION",
            Self::Deferred => "DEFER",
            Self::Selected => "SELECTED",
            Self::ConfirmSent => "CONFIRM",
            Self::CollisionHeard => "COLLISION_HEARD",
            Self::DetectSent => "DETECT",
            Self::Dropped => "DROPPED",
            Self::Admitted => "ADMITTED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    /// 1-based control mini-slot.
    pub minislot: u32,
    pub link: usize,
    pub event: ProtocolEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionSchedule {
    members: LinkSet,
    candidates: LinkSet,
    backoffs: Vec<Option<u32>>,
    trace: Vec<TraceRecord>,
}

impl DecisionSchedule {
    /// A schedule without protocol history, e.g. a single uniformly picked link.
    pub fn from_members<T: Scalar>(topology: &Topology<T>, members: LinkSet) -> Result<Self> {
        check_decision_schedule(topology, &members)?;
        Ok(Self { candidates: members.clone(), members, backoffs: Vec::new(), trace: Vec::new() })
    }

    /// `D`.
    pub fn members(&self) -> &LinkSet {
        &self.members
    }

    /// `S`, the step-one output.
    pub fn candidates(&self) -> &LinkSet {
        &self.candidates
    }

    /// Backoff drawn by each link, `None` for links that abstained.
    pub fn backoffs(&self) -> &[Option<u32>] {
        &self.backoffs
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// One `minislot link EVENT` line per record.
    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.trace {
            writeln!(w, "{} {} {}", r.minislot, r.link, r.event)?;
        }
        Ok(())
    }
}

fn first_conflict<T: Scalar>(topology: &Topology<T>, set: &LinkSet) -> Option<(usize, usize)> {
    for i in set.iter() {
        if let Some(j) = two_hop_closure(topology, i).into_iter().find(|&j| set.contains(j)) {
            return Some((i, j));
        }
    }
    None
}

pub fn is_valid_decision_schedule<T: Scalar>(topology: &Topology<T>, set: &LinkSet) -> bool {
    first_conflict(topology, set).is_none()
}

pub(crate) fn check_decision_schedule<T: Scalar>(topology: &Topology<T>, set: &LinkSet) -> Result<()> {
    if set.n_links() != topology.n_links() {
        return Err(Error::Contract(format!(
            "set over {} links for a topology with {}",
            set.n_links(),
            topology.n_links()
        )));
    }
    match first_conflict(topology, set) {
        Some((i, j)) => Err(Error::InvalidDecisionSchedule(i, j)),
        None => Ok(()),
    }
}

/// Simulates one run of the mini-slot protocol. Radios hear exactly the links within the
/// close-in radius; transmissions in a mini-slot are collected first and delivered after.
pub fn run_decision_protocol<T: Scalar, R: Rng + ?Sized>(
    topology: &Topology<T>,
    pc: &ProtocolConfig,
    rng: &mut R,
) -> DecisionSchedule {
    let n = topology.n_links();
    let w = pc.backoff_window();
    let mut trace = Vec::new();
    let backoffs: Vec<Option<u32>> = (0..n)
        .map(|i| {
            // participation coin first, then backoff, per link in id order
            let joins = pc.participation() >= 1.0 || rng.gen::<f64>() < pc.participation();
            if joins {
                Some(rng.gen_range(0..w))
            } else {
                trace.push(TraceRecord { minislot: 1, link: i, event: ProtocolEvent::Abstained });
                None
            }
        })
        .collect();
    let mut silenced = vec![false; n];
    let mut candidates = LinkSet::empty(n);

    let mut by_slot: Vec<Vec<usize>> = vec![Vec::new(); w as usize];
    for (i, b) in backoffs.iter().enumerate() {
        if let Some(b) = b {
            by_slot[*b as usize].push(i);
        }
    }

    for (b, contenders) in by_slot.iter().enumerate() {
        let minislot = b as u32 + 1;
        let senders: Vec<usize> = contenders.iter().copied().filter(|&i| !silenced[i]).collect();
        for &i in contenders {
            if silenced[i] {
                trace.push(TraceRecord { minislot, link: i, event: ProtocolEvent::Deferred });
            }
        }
        let mut sending = vec![false; n];
        for &i in &senders {
            sending[i] = true;
        }
        for &i in &senders {
            trace.push(TraceRecord { minislot, link: i, event: ProtocolEvent::IntentSent });
            if topology.neighbours(i).iter().any(|&j| sending[j]) {
                trace.push(TraceRecord { minislot, link: i, event: ProtocolEvent::IntentCollided });
            } else {
                candidates.insert(i);
                trace.push(TraceRecord { minislot, link: i, event: ProtocolEvent::Selected });
            }
        }
        // Delivery: every neighbour of a sender senses INTENT and stays silent from now on.
        for &i in &senders {
            silenced[i] = true;
            for &j in topology.neighbours(i) {
                silenced[j] = true;
            }
        }
    }

    let confirm_slot = w + 1;
    for i in candidates.iter() {
        trace.push(TraceRecord { minislot: confirm_slot, link: i, event: ProtocolEvent::ConfirmSent });
    }
    let mut detecting = vec![false; n];
    for k in (0..n).filter(|&k| !candidates.contains(k)) {
        let heard = topology.neighbours(k).iter().filter(|&&j| candidates.contains(j)).count();
        if heard >= 2 {
            detecting[k] = true;
            trace.push(TraceRecord { minislot: confirm_slot, link: k, event: ProtocolEvent::CollisionHeard });
        }
    }

    let detect_slot = w + 2;
    for k in (0..n).filter(|&k| detecting[k]) {
        trace.push(TraceRecord { minislot: detect_slot, link: k, event: ProtocolEvent::DetectSent });
    }
    let mut members = candidates.clone();
    for i in candidates.iter() {
        // DETECT is sensed as energy, so simultaneous DETECTs still register.
        let event = if topology.neighbours(i).iter().any(|&k| detecting[k]) {
            members.remove(i);
            ProtocolEvent::Dropped
        } else {
            ProtocolEvent::Admitted
        };
        trace.push(TraceRecord { minislot: detect_slot, link: i, event });
    }

    let schedule = DecisionSchedule { members, candidates, backoffs, trace };
    assert!(
        is_valid_decision_schedule(topology, &schedule.members),
        "protocol produced an invalid decision schedule {}",
        schedule.members
    );
    schedule
}

/// Every member of `decision` draws its new status from the single-site law evaluated on
/// the common pre-update state, with independent coins in ascending link order.
pub fn parallel_update<T: Scalar, R: Rng + ?Sized>(
    state: &mut ScheduleState,
    decision: &LinkSet,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
    rng: &mut R,
) -> Result<()> {
    check_decision_schedule(topology, decision)?;
    parallel_update_unchecked(state, decision, topology, wf, rng);
    Ok(())
}

pub(crate) fn parallel_update_unchecked<T: Scalar, R: Rng + ?Sized>(
    state: &mut ScheduleState,
    decision: &LinkSet,
    topology: &Topology<T>,
    wf: &WeightFunction<T>,
    rng: &mut R,
) {
    let probs: Vec<(usize, T)> = decision.iter().map(|i| (i, update_probability(i, state, topology, wf))).collect();
    for (i, p) in probs {
        let on = T::sample_open01(rng) < p;
        state.active.set(i, on);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glauber::single_site_update;
    use crate::topology::{generate_topology, NetworkConfig, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Topology<f64> {
        let pos = xs.iter().map(|&x| Point { x, y: 0.0 }).collect();
        Topology::from_positions(NetworkConfig::default(), pos, vec![0.0; xs.len()]).unwrap()
    }

    #[test]
    fn window_must_be_at_least_two() {
        assert!(ProtocolConfig::with_participation(8, 0.0).is_err());
        assert!(ProtocolConfig::with_participation(8, 1.5).is_err());
        assert!(ProtocolConfig::new(1).is_err());
        assert!(ProtocolConfig::new(0).is_err());
        assert_eq!(ProtocolConfig::new(2).unwrap().minislots(), 4);
        assert_eq!(ProtocolConfig::default().backoff_window(), 32);
    }

    #[test]
    fn validity_basics() {
        let clique = line(&[0.0, 1.0, 2.0]);
        assert!(is_valid_decision_schedule(&clique, &LinkSet::empty(3)));
        for i in 0..3 {
            assert!(is_valid_decision_schedule(&clique, &LinkSet::from_ids(3, [i])));
        }
        assert!(!is_valid_decision_schedule(&clique, &LinkSet::from_ids(3, [0, 2])));
        // chain 0-1-2: 0 and 2 share neighbour 1
        let chain = line(&[0.0, 3.0, 6.0]);
        assert!(!is_valid_decision_schedule(&chain, &LinkSet::from_ids(3, [0, 2])));
        let far = line(&[0.0, 3.0, 6.0, 9.0, 12.0]);
        assert!(is_valid_decision_schedule(&far, &LinkSet::from_ids(5, [0, 3])));
    }

    #[test]
    fn no_edges_selects_everyone() {
        let t = line(&[0.0, 10.0, 20.0, 30.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all_in = ProtocolConfig::with_participation(32, 1.0).unwrap();
        for _ in 0..100 {
            let d = run_decision_protocol(&t, &all_in, &mut rng);
            assert_eq!(d.members().len(), 4);
        }
        // abstaining links are exactly the ones missing
        for _ in 0..100 {
            let d = run_decision_protocol(&t, &ProtocolConfig::default(), &mut rng);
            for i in 0..4 {
                assert_eq!(d.members().contains(i), d.backoffs()[i].is_some());
            }
        }
    }

    #[test]
    fn clique_admits_at_most_one() {
        let t = line(&[0.0, 0.5, 1.0, 1.5, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pc = ProtocolConfig::new(2).unwrap();
        let mut nonempty = 0;
        for _ in 0..1000 {
            let d = run_decision_protocol(&t, &pc, &mut rng);
            assert!(d.members().len() <= 1);
            nonempty += usize::from(!d.members().is_empty());
        }
        assert!(nonempty > 0);
    }

    #[test]
    fn trace_level_properties_on_random_topologies() {
        let cfg = NetworkConfig::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = generate_topology(&cfg, &mut rng);
            let n = t.n_links();
            for _ in 0..200 {
                let d = run_decision_protocol(&t, &ProtocolConfig::default(), &mut rng);
                let s = d.candidates();
                for i in s.iter() {
                    assert!(t.neighbours(i).iter().all(|&j| !s.contains(j)), "S not independent");
                }
                // drop correctness
                for i in s.iter() {
                    let should_drop = t
                        .neighbours(i)
                        .iter()
                        .any(|&k| !s.contains(k) && t.neighbours(k).iter().filter(|&&j| s.contains(j)).count() >= 2);
                    assert_eq!(!d.members().contains(i), should_drop);
                }
                let members: Vec<usize> = d.members().iter().collect();
                for &a in &members {
                    for &b in &members {
                        if a != b {
                            assert!(!two_hop_closure(&t, a).contains(&b));
                        }
                    }
                }
                assert!(d.members().iter().all(|i| i < n));
                assert!(d.trace().iter().all(|r| r.minislot >= 1 && r.minislot <= 34));
            }
        }
    }

    #[test]
    fn trace_export_lines() {
        let t = line(&[0.0, 3.0, 6.0]);
        let d = run_decision_protocol(&t, &ProtocolConfig::default(), &mut ChaCha8Rng::seed_from_u64(4));
        let mut buf = Vec::new();
        d.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), d.trace().len());
        assert!(text.lines().all(|l| l.split(' ').count() == 3));
    }

    #[test]
    fn parallel_update_edge_cases() {
        let t = line(&[0.0, 3.0, 6.0]);
        let wf = WeightFunction::log01x();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ScheduleState::new(LinkSet::from_ids(3, [1]), vec![50, 50, 50]).unwrap();
        let before = s.clone();
        parallel_update(&mut s, &LinkSet::empty(3), &t, &wf, &mut rng).unwrap();
        assert_eq!(s, before);
        let bad = LinkSet::from_ids(3, [0, 2]);
        assert!(matches!(parallel_update(&mut s, &bad, &t, &wf, &mut rng), Err(Error::InvalidDecisionSchedule(..))));
    }

    #[test]
    fn singleton_parallel_equals_single_site() {
        let t = line(&[0.0, 2.0, 5.0]);
        let wf = WeightFunction::log01x();
        let s0 = ScheduleState::new(LinkSet::from_ids(3, [1, 2]), vec![300, 40, 900]).unwrap();
        let d = LinkSet::from_ids(3, [0]);
        let mut a = s0.clone();
        let mut b = s0.clone();
        let mut ra = ChaCha8Rng::seed_from_u64(6);
        let mut rb = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            parallel_update(&mut a, &d, &t, &wf, &mut ra).unwrap();
            single_site_update(&mut b, 0, &t, &wf, &mut rb);
            assert_eq!(a, b);
        }
    }
}
