//! Filtering for jump-diffusion signals whose observations and jumps occur
//! at predictable times.
//!
//! The crate provides a path simulator, an exact Kalman filter for the
//! linear-Gaussian case, normalized and unnormalized particle filters, a
//! one-dimensional grid filter used as ground truth, and Monte Carlo checks
//! of the structural identities these filters rely on.

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kalman_jump;
pub mod model;
pub mod oracle_grid;
pub mod particle;
pub mod quadrature;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{ModelSpec, Preset, ScenarioConfig, ValidatedScenario};
