//! Potential theory and compressible Navier-Stokes tooling on bounded,
//! multiply-connected planar domains.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] describes circular and smooth domains and builds grids.
//! * [`laplace`] solves Dirichlet problems by Laurent-series collocation and
//!   locates critical points of harmonic functions.
//! * [`greens`] evaluates the Neumann function with a principal/remainder split
//!   near the boundary.
//! * [`conformal`] maps smooth doubly-connected domains onto annuli.
//! * [`divcurl`] handles div-curl systems and their null space.
//! * [`stationary`] builds and checks steady states.
//! * [`simulator`] integrates the barotropic equations with density-dependent
//!   bulk viscosity.
//! * [`commutator`] evaluates the effective-flux representation integrals.
//! * [`cli`] backs the `mcflow` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commutator;
pub mod conformal;
pub mod divcurl;
pub mod error;
pub mod geometry;
pub mod greens;
pub mod io;
pub mod laplace;
pub mod quad;
pub mod series;
pub mod simulator;
pub mod stationary;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
