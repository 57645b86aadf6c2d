//! Bayesian learning model predictive control.
//!
//! `blmpc` plans controls by maintaining a Gaussian policy over a vector of
//! control knots and updating it with a natural-gradient step towards the
//! Bayesian posterior implied by trajectory costs. Each planning round
//! samples candidate control functions, simulates them through a dynamics
//! model, estimates the gradient of the expected cost with respect to the
//! policy's expectation parameters, and blends the policy towards the prior
//! tilted by that gradient. Executing the first portion of the planned
//! control and re-planning from the new state gives a receding-horizon
//! controller.
//!
//! Module map:
//!
//! - [`policy`] — Gaussian policy as a minimal exponential family: natural
//!   and expectation coordinates, sampling, densities, divergences.
//! - [`rollout`] — control decoding, fixed-step RK4 integration, batch
//!   simulation.
//! - [`cost`] — Bolza trajectory cost with a utility transform, Monte-Carlo
//!   expected cost.
//! - [`blr`] — gradient estimators (finite-difference, score-function,
//!   Gauss-Newton) and the natural-gradient update step.
//! - [`engine`] — per-round optimisation loop, warm-start shifting, the
//!   receding-horizon closed loop.
//! - [`oracles`] — exact/brute-force posterior solvers used for validation.
//! - [`tasks`] — benchmark dynamics models.
//!
//! Batch work (sampling, rollouts, gradient probes) runs on rayon when the
//! default `parallel` feature is enabled and falls back to plain iterators
//! without it. Per-sample randomness is counter-based, so results are
//! bit-identical for a given seed regardless of thread count.

pub mod blr;
pub mod cost;
pub mod engine;
mod error;
mod exec;
pub mod oracles;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod tasks;

pub use error::{BlmpcError, Result};
pub use policy::{ExpectationParams, GaussianPolicy, NaturalParams};
