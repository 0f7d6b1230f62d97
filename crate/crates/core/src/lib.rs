//! Lattice solvers for controlled time-symmetric forward-backward doubly
//! stochastic systems.
//!
//! Both drivers are replaced by fair coins of size `sqrt(dt)`, which turns
//! every conditional expectation into a finite average. On top of the state
//! solver sit the variational and adjoint systems, cost and constraint
//! evaluation, the penalized multiplier search and the linear-quadratic
//! specializations.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod adjoint;
pub mod applications;
pub mod bdsde;
pub mod control;
pub mod ekeland;
pub mod error;
pub mod fbdsde;
pub mod lattice;
pub mod linalg;
pub mod presets;
pub mod variation;
mod sweep;

pub use error::{Error, Result};
