//! # spatial-csma
//!
//! Distributed CSMA scheduling for wireless links under an SIR interference model with
//! Rayleigh fading.
//!
//! * [`topology`]: bipole network instances, gain factors, conflict graph, two-hop closures
//! * [`channel`]: analytic success probabilities and realized SIR outcomes
//! * [`glauber`]: single-site update of the spatial CSMA chain
//! * [`schedule`]: mini-slot decision-schedule protocol and parallel updates
//! * [`baseline`]: conflict-graph (hardcore) CSMA used as comparator
//! * [`oracle`]: exhaustive stationary distributions, kernels and Markov-field checks
//! * [`sim`]: slotted queueing simulation, sweeps and convergence runs
//! * [`verify`]: the bundled self-check suite
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the common `f64` instantiation.

pub mod baseline;
pub mod channel;
pub mod error;
pub mod glauber;
pub mod linkset;
pub mod oracle;
pub mod scalar;
pub mod schedule;
pub mod sim;
pub mod topology;
pub mod verify;

pub use error::{Error, Result};
pub use linkset::LinkSet;
pub use scalar::Scalar;

pub type NetworkConfig64 = topology::NetworkConfig<f64>;
pub type NetworkParams64 = topology::NetworkParams<f64>;
pub type Topology64 = topology::Topology<f64>;
pub type WeightFunction64 = glauber::WeightFunction<f64>;
pub type DistributionTable64 = oracle::DistributionTable<f64>;
pub type TransitionKernel64 = oracle::TransitionKernel<f64>;
pub type RunSpec64 = sim::RunSpec<f64>;
pub type MetricsSeries64 = sim::MetricsSeries<f64>;

pub type NetworkConfig32 = topology::NetworkConfig<f32>;
pub type Topology32 = topology::Topology<f32>;
pub type WeightFunction32 = glauber::WeightFunction<f32>;
pub type RunSpec32 = sim::RunSpec<f32>;
