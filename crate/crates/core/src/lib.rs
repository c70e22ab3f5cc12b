//! Numerical laboratory for multi-scale advection-diffusion on the unit
//! 2-torus: explicit divergence-free velocity hierarchies built from
//! time-cutoff shear cells, a dealiased pseudo-spectral solver with exact
//! integrating-factor diffusion, a first-order homogenization layer (eddy
//! diffusivity and correctors), and Littlewood-Paley diagnostics.

pub mod cutoffs;
pub mod datum;
pub mod diag;
pub mod fft;
pub mod fields;
pub mod grid;
pub mod homogen;
pub mod error;
pub mod params;
pub mod solver;
pub mod util;

pub use error::{CoreError, Result};
