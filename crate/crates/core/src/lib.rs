//! Vanishing-viscosity spectral Galerkin solvers for Keldysh-type equations
//! and smooth transonic Euler–Poisson flows in a flat nozzle.
//!
//! The crate is organised bottom-up:
//!
//! - [`background`]: the one-dimensional accelerating transonic solution.
//! - [`keldysh`]: coefficient fields, the structure condition, extension and mollification.
//! - [`galerkin`]: cosine-mode Galerkin reduction and the viscous ODE solves.
//! - [`linearized`]: linearised Euler–Poisson coefficients, the sonic interface,
//!   the multiplier energy ledger and the coupled elliptic–Keldysh solve.
//! - [`transport`]: stream function, Lagrangian map and entropy transport.
//! - [`nonlinear`]: the outer fixed-point iteration and physical assembly.

pub mod background;
pub mod error;
pub mod galerkin;
pub mod io;
pub mod keldysh;
pub mod linearized;
pub mod nonlinear;
pub mod numerics;
pub mod transport;

pub use error::{Error, Result};
