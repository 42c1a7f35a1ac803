//! Numerical laboratory for the KdV limit of the one-dimensional
//! Euler-Poisson system for ion-acoustic waves with Boltzmann electrons.
//!
//! Layers, bottom-up:
//! - [`params`], [`grid`], [`spectral`]: constants, periodic grid, Fourier kernels;
//! - [`series`], [`jet`]: truncated ε-series and time-Taylor jets, plus the
//!   residual engine that expands the scaled system order by order;
//! - [`kdv`]: ETDRK4 solvers for the KdV and linearized KdV equations;
//! - [`hierarchy`]: the four-profile expansion;
//! - [`euler_poisson`]: direct solver at finite ε;
//! - [`remainder`]: remainder extraction, norms and consistency checks;
//! - [`harness`]: configuration, persistence and experiment drivers.

pub mod error;
pub mod euler_poisson;
pub mod grid;
pub mod harness;
pub mod hierarchy;
pub mod jet;
pub mod kdv;
pub mod params;
pub mod remainder;
pub mod series;
pub mod spectral;

pub use error::{LabError, Result};
pub use grid::{Grid, GridField};
pub use params::{acoustic_determinant, make_params, PhysParams, Preset};
