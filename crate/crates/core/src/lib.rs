//! Greedy least-squares contextual bandits under smoothed adversaries.
//!
//! The crate is layered bottom-up: [`linalg`] and [`distributions`] supply
//! numerics and seeded sampling, [`environment`] produces perturbed contexts,
//! [`bandit`] runs the greedy learner, [`conditions`] certifies the diversity
//! and margin conditions by Monte Carlo, and [`harness`] drives experiments.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod conditions;
pub mod distributions;
pub mod environment;
pub mod error;
pub mod harness;
pub mod linalg;

pub use error::{Error, Result};
