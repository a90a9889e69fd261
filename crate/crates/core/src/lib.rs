//! Numerical laboratory for the parabolically regularized compressible
//! primitive equations with density-proportional viscosity on the periodic
//! channel `T^2 x (0,1)`.
//!
//! The crate is organised bottom-up:
//!
//! - [`domain`]: grid, fields and the finite-difference calculus,
//! - [`init`]: admissible initial data and its regularized approximation,
//! - [`density`], [`vertical`], [`momentum`]: right-hand sides and steppers,
//! - [`solver`]: the coupled RK2 trajectory driver,
//! - [`diagnostics`]: energy / entropy / Mellet-Vasseur functionals and audits,
//! - [`degiorgi`]: vanishing-level certificates for level-set decay,
//! - [`galerkin`]: the small-mode Galerkin fixed-point sandbox,
//! - [`sweep`]: the epsilon ladder,
//! - [`io`] and [`harness`]: file formats, configuration and subcommands.

pub mod degiorgi;
pub mod density;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod galerkin;
pub mod harness;
pub mod init;
pub mod io;
pub mod momentum;
pub mod solver;
pub mod sweep;
pub mod vertical;

pub use domain::{
    integral_omega, integral_omega_h, Grid, HorizontalOps, ScalarField2D, ScalarField3D,
    VectorField2D, VectorField3D,
};
pub use error::{Error, Result};
