//! Numerical laboratory for finite-time blow-up of the stochastic heat
//! equation `u_t = u_xx + u^γ Ẇ` on a bounded interval with Dirichlet data.
//!
//! The crate provides the finite-difference solver, heat kernels, the
//! renormalization map, the mass martingale and its quadratic-variation
//! bounds, gambler's-ruin estimates, the noise-splitting construction and a
//! Galton–Watson surrogate, each with the harnesses that verify it.

pub mod branching;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod martingale;
pub mod noise;
pub mod passage;
pub mod quad;
pub mod scaling;
pub mod solver;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
