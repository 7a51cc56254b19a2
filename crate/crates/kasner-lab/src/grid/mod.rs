//! Spatial and temporal discretisation shared by every other module.

mod fd;
mod norms;
mod tensor;
mod time;

pub use fd::{fd_derivative, fd_derivative_unchecked};
pub use norms::{hs_norm, ws_norm, MAX_SOBOLEV_ORDER};
pub use tensor::{Symmetry, TensorField};
pub use time::{
    cumulative_log_time_integral, fornberg_weights, log_time_integral, stencil_window,
    cumulative_log_time_integral_with, LogTimeGrid, Quadrature, TailRule,
};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Scalar = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Periodic,
    Localized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdOrder {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "4")]
    Four,
}

impl FdOrder {
    pub fn from_int(k: usize) -> Result<Self> {
        match k {
            2 => Ok(FdOrder::Two),
            4 => Ok(FdOrder::Four),
            _ => Err(Error::Invalid(format!("fd order must be 2 or 4, got {k}"))),
        }
    }

    pub fn as_int(self) -> usize {
        match self {
            FdOrder::Two => 2,
            FdOrder::Four => 4,
        }
    }
}

/// Uniform cube `[0, delta)^3` with `n` points per axis.
///
/// Points are stored with axis 1 slowest: index `(i * n + j) * n + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    pub delta: f64,
    pub n: usize,
    pub mode: GridMode,
    pub order: FdOrder,
}

impl SpatialGrid {
    pub fn new(delta: f64, n: usize, mode: GridMode, order: FdOrder) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Invalid(format!("delta must be positive, got {delta}")));
        }
        if n < 8 {
            return Err(Error::Invalid(format!("n_pts must be at least 8, got {n}")));
        }
        Ok(SpatialGrid { delta, n, mode, order })
    }

    pub fn periodic(delta: f64, n: usize) -> Self {
        SpatialGrid::new(delta, n, GridMode::Periodic, FdOrder::Four).expect("valid grid")
    }

    pub fn h(&self) -> f64 {
        self.delta / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(3)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn point(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.point(idx);
        let h = self.h();
        [i as f64 * h, j as f64 * h, k as f64 * h]
    }

    /// Samples `f(x1, x2, x3)` at every grid point.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Scalar {
        (0..self.len()).map(|idx| f(self.coords(idx))).collect()
    }

    /// Samples on the face `x3 = 0`, indexed `i * n + j`.
    pub fn sample_slice(&self, f: impl Fn([f64; 3]) -> f64) -> Scalar {
        let h = self.h();
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(f([i as f64 * h, j as f64 * h, 0.0]));
            }
        }
        out
    }

    /// `2 pi / delta`, the wavenumber of the fundamental periodic mode.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.delta
    }
}

/// Returns the first non-finite entry as an error.
pub fn check_finite(grid: &SpatialGrid, what: &str, f: &[f64]) -> Result<()> {
    match f.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => Err(Error::NonFinite {
            what: what.to_string(),
            point: grid.point(idx),
        }),
    }
}

pub fn max_abs(f: &[f64]) -> f64 {
    f.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
