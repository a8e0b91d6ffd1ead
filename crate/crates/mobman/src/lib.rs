//! # mobman
//!
//! A self-contained planning and control toolkit for a differential-drive
//! mobile manipulator: a serial arm described by Denavit-Hartenberg
//! parameters riding on a two-wheeled base. The crate covers the full
//! pick-and-place pipeline in simulation:
//!
//! - [`kinematics`]: DH forward kinematics, geometric Jacobians and damped
//!   pseudoinverses.
//! - [`dynamics`]: Lagrangian rigid-body dynamics (mass matrix, Coriolis,
//!   gravity), inverse/forward dynamics and an RK4 integrator.
//! - [`traj`]: quintic joint-space trajectories with full boundary
//!   conditions and velocity/acceleration limit handling.
//! - [`ik`]: two racing inverse-kinematics strategies — damped-pseudoinverse
//!   iteration with random restarts, and a joint-movement-minimizing
//!   Gauss-Newton solver with a sum-of-squares error constraint.
//! - [`grid`]: A* planning on 2D occupancy grids with selectable
//!   connectivity/heuristic and constant-speed time parameterization.
//! - [`diffdrive`]: unicycle simulation with exact-arc integration and a
//!   PID path follower.
//! - [`control`]: joint-space PID torque control closed over the dynamics
//!   integrator.
//! - [`task`]: the pick-and-place finite state machine tying everything
//!   together over a simple 2D warehouse world.
//!
//! Everything is deterministic: fixed-step integrators, seeded RNG, and a
//! sequential execution mode for the IK race so identical inputs reproduce
//! identical outputs bit for bit.

pub mod config;
pub mod control;
pub mod diffdrive;
pub mod dynamics;
pub mod grid;
pub mod ik;
mod error;
pub mod kinematics;
pub mod task;
pub mod traj;

pub use error::{Error, Result};
