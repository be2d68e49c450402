//! Continuous-time trajectory optimization and receding-horizon control lab.
//!
//! The crate provides the pieces needed to study what first-order trajectory
//! optimizers actually deliver inside a receding-horizon loop:
//!
//! * [`signal`]: grid-sampled controls and trajectories with L2 geometry;
//! * [`models`] / [`systems`]: system and cost abstractions plus built-in
//!   example systems, including two spliced systems whose natural costs
//!   admit stationary points far from the origin;
//! * [`sim`]: fixed-step RK4 rollout and cost evaluation;
//! * [`adjoint`]: cost gradients via the backward costate equation, with a
//!   finite-difference oracle;
//! * [`linearize`]: Jacobian linearization along a nominal pair, the drift
//!   term, the affine-dynamics convex surrogate cost and its minimizer;
//! * [`riccati`]: stabilizability measurement through the finite-horizon
//!   time-varying Riccati equation;
//! * [`planner`]: gradient descent with Armijo backtracking producing
//!   approximate stationary points under a descent contract, plus a bounded
//!   enumeration oracle for desk-scale global minima;
//! * [`certify`]: sampling-based assumption checks and the decay constants
//!   they imply, with node-wise bound verification against simulated
//!   trajectories;
//! * [`rhc`]: the warm-started receding-horizon loop and its decay report.

pub mod adjoint;
pub mod certify;
pub mod error;
pub mod grid;
pub mod linearize;
pub mod models;
pub mod planner;
pub mod rhc;
pub mod riccati;
pub mod sampling;
pub mod sim;
pub mod signal;
pub mod systems;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use signal::{ControlSignal, Trajectory};
