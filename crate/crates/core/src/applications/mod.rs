//! Specializations: a forward SDE driving a backward doubly stochastic
//! equation, control of a single backward equation, linear-quadratic
//! problems and the zero-optimum example.

pub mod bdsde_only;
pub mod classical;
pub mod example;
pub mod fit;
pub mod lq;
