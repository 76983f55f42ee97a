//! Budgeted gating between a cheap imitation policy and an expensive good
//! policy on finite Markov decision processes.
//!
//! The crate is `no_std` (with `alloc`) so the algorithms can run anywhere;
//! file formats, the CLI, and parallel sweeps live in the `gatecraft` crate.
//!
//! Module map:
//! - [`dist`]: action distributions, entropy, KL divergence, Q-to-policy softmax.
//! - [`env`]: tabular toy environments, observations, rollouts.
//! - [`oracle`]: value iteration and the Boltzmann good policy.
//! - [`approx`]: small dense networks, analytic gradients, Adam.
//! - [`epi`]: entropy-based imitation and its threshold rules.
//! - [`api`]: alternating-minimization imitation under a routing budget.
//! - [`runtime`]: composite policy, baselines, cost accounting, evaluation.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod api;
pub mod approx;
pub mod dist;
pub mod env;
pub mod epi;
mod error;
pub mod math;
pub mod oracle;
pub mod rng;
pub mod runtime;

pub use error::{Error, Result};
