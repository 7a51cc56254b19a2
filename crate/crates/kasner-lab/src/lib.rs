//! Numerical laboratory for Kasner-like singular solutions of the vacuum
//! Einstein equations in an orthonormal-frame formulation.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: spatial grids, finite differences, log-time quadrature, norms
//! - [`asym_data`]: asymptotic data on the singularity
//! - [`frame`]: frames, connection coefficients, curvature and residuals
//! - [`iteration`]: the iterate tower built from asymptotic data
//! - [`evolution`]: forward evolution of the full first-order system
//! - [`diagnostics`]: configuration, file formats, reports and commands

pub mod asym_data;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod frame;
pub mod grid;
pub mod iteration;

pub use error::{Error, Result};

/// Artifact version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
