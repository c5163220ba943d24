//! Proximity-operations GNC sandbox for irregular small bodies.
//!
//! The crate simulates point-to-point transits of a thruster-controlled
//! spacecraft near a constant-density polyhedral asteroid and implements the
//! full learning pipeline around it:
//!
//! * [`mesh`] / [`gravity`] — watertight triangle meshes and the exact
//!   closed-form polyhedral gravity field,
//! * [`sim`] — RK4 translational dynamics, thrust limits and the slow
//!   random-walk disturbance used for recovery-trajectory data,
//! * [`lidar`] — a 12-plane spherical scanning array synthesized by
//!   ray-mesh intersection, with the `-100` miss sentinel,
//! * [`mpc`] — the privileged expert: SCP over a box-constrained QP with an
//!   ellipsoidal keep-out zone,
//! * [`nn`] — a small deterministic network substrate (dense, circular
//!   convolution, LSTM, Adam) with exact reverse-mode gradients,
//! * [`surrogate`] — the position-to-frame MLP used to synthesize lidar for
//!   disturbed episodes,
//! * [`policy`] — the imitation-learned frames-plus-goal controller,
//! * [`hybrid`] — the MPC-guided controller with the dual-threshold
//!   viability check,
//! * [`dataset`] / [`eval`] — dataset generation, deterministic splits, and
//!   the evaluation/reporting machinery behind the `proxops` CLI.

pub mod gravity;
pub mod lidar;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod hybrid;
pub mod mpc;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod rollout;
pub mod seed;
pub mod surrogate;
pub mod mesh;
pub mod sim;

pub use mesh::AsteroidMesh;
pub use sim::{SpacecraftState, ThrustCommand};
