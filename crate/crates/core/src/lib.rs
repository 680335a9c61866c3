//! Reward-guided editing of generative samples as trajectory optimal control.
//!
//! A source sample `x_1` is mapped back onto a sampling trajectory of a
//! diffusion (ε-prediction) or flow-matching (velocity) model, either by
//! deterministic inversion or by a Markovian forward process whose Brownian
//! increments are frozen as residuals. An open-loop control `u_t` is then
//! added to the drift and refined by iterating the Pontryagin conditions:
//! a backward adjoint sweep `p_t`, a step of `u_t` towards `-p_t`, and a
//! forward re-simulation. The terminal point of the refined trajectory is
//! the edited sample.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File
//! formats, the experiment harness and the command line live in the
//! `trajedit` crate.
//!
//! Module map:
//!
//! - [`schedule`]: time grid and noise schedules for both model families.
//! - [`field`]: analytic and MLP generative fields with exact VJPs, plus trainers.
//! - [`dynamics`]: one-step maps, drifts, inversion, Markovian trajectories, rollout.
//! - [`control`]: adjoint recursion, control update, cost and the edit loop.
//! - [`rewards`]: differentiable terminal rewards.
//! - [`baselines`]: gradient ascent and inversion + guided sampling (DPS, FreeDoM, TFG).
//! - [`pareto`]: reward/fidelity aggregation and non-dominated fronts.
#![no_std]
// `!(x > 0.0)` forms reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod control;
pub mod data;
pub mod dynamics;
mod error;
pub mod field;
pub mod math;
pub mod pareto;
pub mod rewards;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
