//! Penalization solver for decoupled Markovian doubly reflected BSDEs.
//!
//! The obstacles are replaced by a penalty of intensity `lambda`, the forward
//! process is simulated on a fine grid and the backward equation is stepped
//! implicitly on a coarse grid with regression-based conditional expectations.
//! A CRR Dynkin-game tree supplies the penalty-free reference value.
//!
//! Modules, bottom-up:
//!
//! - [`model`]: coefficients, obstacles and the penalized driver
//! - [`forward_sim`]: seeded two-grid path generation
//! - [`regression`]: least-squares conditional expectations
//! - [`backward_solver`]: implicit penalized backward induction
//! - [`reference`]: CRR Dynkin tree and Black–Scholes put
//! - [`experiment`]: multi-seed sweeps, rate fit, CSV output
//! - [`cli`]: config parsing and subcommands of the `drbsde` binary

pub mod backward_solver;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod forward_sim;
pub mod model;
pub mod reference;
pub mod regression;

pub use backward_solver::{backward_induct, implicit_step_solve, BackwardSolution, SolveOptions};
pub use error::{Error, Result};
pub use experiment::{fit_rate_constant, grid_sweep, penalty_sweep, run_trial, RateFit, SweepRow, TrialSetup};
pub use forward_sim::{derive_increments, simulate_euler_two_grid, simulate_exact_gbm, GridSpec, PathEnsemble, Sampler};
pub use model::{payoff_bundle, penalized_driver, validate_regime, GameModel, ModelSpec, ObstaclePair, PenaltyParam};
pub use reference::{bs_put_price, crr_dynkin_price, TreeSpec};
pub use regression::{BasisSpec, RegressionFit};
