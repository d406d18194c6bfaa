//! Solvers for high-dimensional parabolic partial integro-differential
//! equations through their forward-backward SDE-with-jumps representation.
//!
//! The crate contains:
//!
//! - [`stochastic`]: seedable Brownian / compensated-Poisson noise and
//!   Gauss-Legendre integration over the jump-mark space.
//! - [`problem`]: coefficient bundles, the two benchmark problems and a
//!   finite-difference PIDE residual.
//! - [`net`]: feedforward networks, a batched reverse-mode tape and
//!   first-order optimizers.
//! - [`deep`]: the deep FBSDE scheme (rollout, terminal loss, training).
//! - [`markovian`]: the regression-based Markovian iteration and a
//!   one-dimensional quadrature oracle for conditional expectations.
//! - [`analysis`]: error functionals, convergence-rate fits and the
//!   loss-versus-error diagnostic.
//! - [`cli`]: configuration parsing and subcommand dispatch.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod deep;
pub mod dual;
pub mod error;
pub mod grid;
pub mod markovian;
pub mod net;
pub mod problem;
pub mod quadrature;
pub mod seed;
pub mod stochastic;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use problem::ProblemSpec;
pub use stochastic::{JumpMeasure, NoiseBlock};
