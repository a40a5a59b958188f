//! Belief-driven asset pricing with overlapping generations of adaptive
//! learners.
//!
//! The crate simulates a population of agents who each learn the probability
//! of a binary signal from its history, trade Arrow securities on the next
//! signal, and die at a constant rate. Prices reveal the wealth-weighted
//! belief, and repeated betting against the market spreads wealth into a
//! power-law tail.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod belief_dynamics;
pub mod error;
pub mod market_finite_n;
pub mod market_large_n;
pub mod numeric;
pub mod params;
pub mod rng;
pub mod sim_engine;
pub mod snapshot_io;
pub mod wealth_stats;

pub use error::{Error, Result};
pub use params::{LearningRule, ModelParams, RunConfig, TailRegime};
