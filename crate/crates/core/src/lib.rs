//! Risk-adaptive backoff allocation for periodic safety beacons.
//!
//! Two engines share one parameter set: an analytic Markov-chain fixed point
//! ([`analysis::analyze`]) and a slot-level Monte Carlo simulator
//! ([`sim::simulate`]). The [`experiment`] module sweeps either engine and
//! writes CSV tables.

pub mod allocator;
pub mod analysis;
pub mod collision;
pub mod error;
pub mod experiment;
pub mod risk;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod spatial;

pub use error::{Error, Result};
pub use scenario::{AllocatorMode, Scenario};
