//! Projected iterative LQR for optimal control with pure-state and
//! state-input equality constraints.
//!
//! Each iteration linearizes the problem around the nominal trajectory,
//! eliminates the constraints from the LQ subproblem by projecting the input
//! onto the null space of the previewed constraint stack, solves the projected
//! (possibly singular) problem with a Riccati sweep and line-searches the
//! resulting feedback policy on a merit function.

pub mod error;
pub mod linalg;
pub mod problem;
pub mod projection;
pub mod riccati;
pub mod rollout;
pub mod solver;
pub mod systems;

pub use error::{Error, Result};
pub use problem::{
    Dynamics, Ocp, StageCost, StateConstraint, StateInputConstraint, TerminalCost, Trajectory,
};
pub use riccati::Policy;
pub use solver::{solve, SolveStatus, SolverResult, SolverSettings};
