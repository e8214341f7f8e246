//! Hyperrectangular sample domains and coordinate normalization.
//!
//! All internal geometry lives on the unit cube `[0,1]^D`; a `DomainSpec`
//! carries the affine map between original units and normalized coordinates.

use crate::error::{DeferError, Result};
use serde::{Deserialize, Serialize};

/// A bounded axis-aligned box in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(DeferError::InvalidDomain(format!(
                "need matching non-empty bounds, got {} lower / {} upper",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(DeferError::InvalidDomain(format!(
                    "non-finite bound in dimension {i}"
                )));
            }
            if hi <= lo {
                return Err(DeferError::InvalidDomain(format!(
                    "upper bound {hi} <= lower bound {lo} in dimension {i}"
                )));
            }
        }
        Ok(DomainSpec { lower, upper })
    }

    /// Unit cube `[0,1]^dim`.
    pub fn unit_cube(dim: usize) -> Self {
        DomainSpec::new(vec![0.0; dim], vec![1.0; dim]).expect("unit cube is valid")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    /// Sum of log side lengths; the log-volume correction between
    /// normalized-cube integrals and original-unit integrals.
    pub fn log_volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).ln())
            .sum()
    }

    pub fn volume(&self) -> f64 {
        self.log_volume().exp()
    }

    /// Map a normalized coordinate to original units.
    #[inline]
    pub fn denormalize_coord(&self, dim: usize, u: f64) -> f64 {
        self.lower[dim] + u * (self.upper[dim] - self.lower[dim])
    }

    /// Map an original-unit coordinate to `[0,1]`.
    #[inline]
    pub fn normalize_coord(&self, dim: usize, x: f64) -> f64 {
        (x - self.lower[dim]) / (self.upper[dim] - self.lower[dim])
    }

    pub fn denormalize_point(&self, u: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.dim()).map(|i| self.denormalize_coord(i, u[i])));
    }

    /// Normalize a point, rejecting coordinates outside the closed domain.
    pub fn normalize_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(DeferError::InvalidDomain(format!(
                "point has {} coordinates, domain has {}",
                x.len(),
                self.dim()
            )));
        }
        let mut u = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            if !(x[i] >= self.lower[i] && x[i] <= self.upper[i]) {
                return Err(DeferError::OutOfDomain {
                    dim: i,
                    value: x[i],
                    lo: self.lower[i],
                    hi: self.upper[i],
                });
            }
            u.push(self.normalize_coord(i, x[i]));
        }
        Ok(u)
    }
}
