//! Slab-geometry radiative transfer with an uncertain initial amplitude:
//! a P_N moment discretization, a dense explicit-Euler reference solver, a
//! fixed-rank augmented BUG low-rank integrator, and Monte Carlo /
//! control-variate estimators of the expected scalar flux.

pub mod bug;
pub mod check;
pub mod error;
pub mod estimators;
pub mod full_rank;
pub mod grid;
pub mod harness;
pub mod model;
pub mod quadrature;
pub mod rhs;
pub mod sampling;
pub mod statistics;
pub mod transport;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
