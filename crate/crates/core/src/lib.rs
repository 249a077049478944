//! Noise-averaged evolution channels for a closed quantum system driven by
//! Brownian GUE/GOE white noise, the chaos diagnostics built on them, and a
//! stochastic-trajectory Monte Carlo oracle that checks every closed form.
//!
//! The Hamiltonian is `H(t) = diag(E) + eta(t)` with white noise `eta`. The
//! averaged single-replica channel `E[U (x) U*]` is stored in a delta-structure
//! basis of three `D x D` coefficient grids ([`channel_one`]); the averaged
//! two-replica channel for constant GUE noise is a spectral phase times eight
//! coefficient functions over 24 contraction diagrams ([`channel_two`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel_one;
pub mod channel_two;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod noise;
pub mod spectra;

pub use error::{Error, Result};

/// Complex double used throughout.
pub type C64 = num::Complex<f64>;

/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
