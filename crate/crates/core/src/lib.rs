//! Tracking a single atom in a multimode Laguerre-Gaussian cavity.
//!
//! The crate covers the full chain: the mode basis, the stationary field of
//! an atom at rest, stochastic atom-field dynamics, a segmented
//! photodetector with shot noise, and reconstruction of the atom's path from
//! detector counts alone.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detector;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod laguerre;
pub mod modes;
pub mod params;
pub mod pipeline;
pub mod quadrature;
pub mod reconstruct;
pub mod steady;

pub use error::{Error, Result};
