//! Flatness-based constrained MPC toolkit for a quadcopter.
//!
//! The quadcopter translational dynamics become a chain of integrators in the
//! flat output space, but the thrust/roll/pitch input bounds turn into a
//! non-convex set there. This crate builds a polytopic inner approximation of
//! that set by inflating scaled zonotopes, and uses it inside a linear MPC
//! whose commands are guaranteed to map back to feasible physical inputs.
//!
//! Pipeline, bottom to top:
//!
//! * [`flatmap`] — the coordinate change between body inputs and flat-space
//!   accelerations, plus membership tests for the involved sets.
//! * [`zonotope`] / [`geomhull`] — scaled zonotopes and exact 3-D polytope
//!   geometry (hull, volume, half-space conversion).
//! * [`inner_approx`] — the scaling optimization that inflates zonotopes
//!   inside the convex flat-space set and hulls them into the final polytope.
//! * [`qpsolver`] — dense primal active-set QP solver.
//! * [`mpc`] — flat-space MPC and the piecewise-affine baseline controller.
//! * [`trajectories`] / [`simulator`] — reference scenarios and closed-loop
//!   simulation with logging and metrics.
//!
//! Batch operations (anchor sweeps, Monte Carlo membership checks, multi-seed
//! simulations) run on rayon when the default `parallel` feature is enabled
//! and fall back to sequential loops without it.

pub mod flatmap;
pub mod geomhull;
pub mod inner_approx;
pub mod mpc;
pub mod qpsolver;
pub mod simulator;
pub mod trajectories;
pub mod zonotope;

mod exec;

pub use flatmap::{BodyInput, ConstraintParams, FlatInput, FlatState};
pub use geomhull::Polytope;
pub use inner_approx::{ApproxConfig, ApproxResult};
// pub use mpc::MpcConfig;
// pub use simulator::{SimConfig, SimLog};
// pub use trajectories::ReferenceTrajectory;
pub use zonotope::Zonotope;
