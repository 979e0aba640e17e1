//! Resonant quantum search on a multilevel Jaynes-Cummings model.
//!
//! An N-level atom coupled to a single cavity mode, tuned to the
//! transition between a chosen initial level and a searched level,
//! transfers probability between exactly those two levels on a slow Rabi
//! time scale while every other coupling dephases. Measured at the
//! quarter-period tau = (pi/2 lambda) sqrt(N), this behaves like an
//! analog search with the characteristic sqrt(N) scaling.
//!
//! The crate provides:
//! - [`model`]: spectrum, photon statistics, coupling normalization and
//!   configuration validation;
//! - [`dynamics`]: the exact interaction-picture amplitude equations and
//!   a fixed-step RK4 integrator with norm monitoring;
//! - [`oracle`]: a dense-matrix reference propagator (eigendecomposition)
//!   for desk-scale cross-checks of the integrator;
//! - [`analysis`]: closed-form two-mode predictions, peak extraction and
//!   the sqrt(N) scaling fit;
//! - [`config`] / [`cli`]: the flat key = value run configuration format
//!   and the CSV-emitting subcommand implementations.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod oracle;

pub use error::{Error, Result};
