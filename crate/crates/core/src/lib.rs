//! Gradient Kawasaki lattice gases under weak asymmetry.
//!
//! The crate computes the coefficients of the stochastic Burgers / KPZ
//! fluctuation equation of a one-dimensional conservative lattice gas from
//! its microscopic rates and checks the identities that tie them together:
//! detailed balance, the gradient condition, `H = χD`, the
//! fluctuation-dissipation relation and the second-order Einstein relation
//! `∂λ/∂a = ½ (χD)''`. Monte Carlo and SPDE integrators provide the
//! dynamical side of the comparison.

pub mod config;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod gradient;
pub mod kmc;
pub mod lattice;
pub mod sbe;
pub mod thermo;

pub use error::{Error, Result};
