//! Simulation core for an all-fiber loop buffer that stores polarization-encoded
//! weak coherent pulses.
//!
//! The buffer is a Sagnac loop with a gated poled-fiber phase modulator in front
//! of a storage line terminated by a fiber Bragg grating. Pulses are routed into
//! the storage line by one drive pulse and routed back out by a second one some
//! number of storage cycles later.
//!
//! Layers, bottom-up:
//!
//! - [`polarization`]: exact 2x2 density-matrix and Jones algebra.
//! - [`components`]: transfer rules for every optical element.
//! - [`engine`]: discrete-event propagation under a drive schedule.
//! - [`detection`]: click statistics, Monte Carlo sampling, histograms.
//! - [`experiments`]: retrieval-time and HWP sweeps, visibility, decay fits and
//!   calibration.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the command
//! line live in the `qbuf` crate.
#![no_std]
#![warn(missing_debug_implementations, rust_2018_idioms)]
// `!(x >= 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod components;
pub mod detection;
pub mod engine;
mod error;
pub mod experiments;
pub mod polarization;
pub mod rng;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Absolute tolerance for algebraic identities.
pub const ALGEBRA_TOL: f64 = 1e-12;

/// Absolute tolerance applied to user-supplied inputs (normalization checks etc).
pub const INPUT_TOL: f64 = 1e-9;
