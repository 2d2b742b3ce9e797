//! Reach-avoid value functions for a pursuit-evasion game, computed by level
//! sets, with Gaussian-process models of the value function's numerical error.
//!
//! The pipeline:
//!
//! 1. [`solver::solve_qvi`] computes `Ṽ` on a grid backward from `t = 0`.
//! 2. [`rollout::sample_errors`] simulates the closed loop under the
//!    policies extracted from `Ṽ` and records `ε̃ = Ṽ − V_{ũ,d̃}`.
//! 3. [`gp::fit`] regresses `ε̃` on `(x, t)` with an exact GP.
//! 4. [`corrector::correct_series`] forms `V̂ = Ṽ − ε̂` and
//!    [`corrector::evaluate_correction`] compares both value functions
//!    against their own closed-loop rollouts.
//! 5. [`hybrid::select`] turns a value and a predictive standard deviation
//!    into a controller switch.
//!
//! [`experiments`] wires these stages to files, and backs the `reachgp`
//! binary.

pub mod archive;
pub mod corrector;
pub mod error;
pub mod experiments;
pub mod game;
pub mod gp;
pub mod grid;
pub mod hybrid;
pub mod rollout;
pub mod solver;

pub use error::{Error, Result};
pub use game::{ProblemSpec, State};
pub use grid::{Costate, Grid, ScalarField};
pub use solver::{SeriesLabel, SolverConfig, ValueSeries};

/// The case-study grid: 21 nodes per dimension on `[−1, 1]² × [0, 1)`, with
/// the heading periodic.
pub fn case_study_grid() -> Grid {
    Grid::new(
        vec![-1.0, -1.0, 0.0],
        vec![1.0, 1.0, 1.0],
        vec![21, 21, 21],
        vec![false, false, true],
    )
    .expect("static grid is valid")
}
