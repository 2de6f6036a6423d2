use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::constants::PhysicalConstants;
use crate::error::{Error, Result};

/// What lies beyond the two ends of one grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AxisBoundary {
    /// Stretched-coordinate absorbing layer backed by a zero field.
    #[default]
    Pml,
    /// Wrap-around coupling of the first and last cell.
    Periodic,
    /// Zero field just outside the grid, no absorption.
    Dirichlet,
}

/// Absorbing boundary description. `thickness_cells` applies to every side
/// whose axis uses [`AxisBoundary::Pml`], unless `z_thickness_cells`
/// overrides it along z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlSpec {
    pub thickness_cells: usize,
    #[serde(default)]
    pub z_thickness_cells: Option<usize>,
    pub max_conductivity_scale: f64,
    pub polynomial_order: u32,
    #[serde(default)]
    pub x_boundary: AxisBoundary,
    #[serde(default)]
    pub z_boundary: AxisBoundary,
}

/// `-ln R` of the nominal normal-incidence reflection of the graded layer.
const LOG_REFLECTION: f64 = 16.0;

impl Default for PmlSpec {
    fn default() -> Self {
        Self {
            thickness_cells: 10,
            z_thickness_cells: None,
            max_conductivity_scale: 2.0,
            polynomial_order: 3,
            x_boundary: AxisBoundary::Pml,
            z_boundary: AxisBoundary::Pml,
        }
    }
}

impl PmlSpec {
    pub fn with_thickness(thickness_cells: usize) -> Self {
        Self {
            thickness_cells,
            ..Self::default()
        }
    }

    /// No absorbing layer on either axis.
    pub fn none() -> Self {
        Self {
            thickness_cells: 0,
            x_boundary: AxisBoundary::Dirichlet,
            z_boundary: AxisBoundary::Dirichlet,
            ..Self::default()
        }
    }

    /// Per-axis thicknesses in cells, `(x, z)`.
    pub fn thickness(&self) -> (usize, usize) {
        (
            self.thickness_cells,
            self.z_thickness_cells.unwrap_or(self.thickness_cells),
        )
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let (tx, tz) = self.thickness();
        let uses_pml =
            self.x_boundary == AxisBoundary::Pml || self.z_boundary == AxisBoundary::Pml;
        if uses_pml {
            for (b, t) in [(self.x_boundary, tx), (self.z_boundary, tz)] {
                if b == AxisBoundary::Pml && t < 4 {
                    return Err(Error::InvalidConfig(format!(
                        "PML needs at least 4 cells, got {t}"
                    )));
                }
            }
            if self.polynomial_order < 1 {
                return Err(Error::InvalidConfig("PML order must be >= 1".into()));
            }
            if !(self.max_conductivity_scale >= 0.0) {
                return Err(Error::InvalidConfig("PML scale must be >= 0".into()));
            }
        }
        for (b, t, n, axis) in [
            (self.x_boundary, tx, rows, "x"),
            (self.z_boundary, tz, cols, "z"),
        ] {
            if b == AxisBoundary::Pml && 2 * t >= n {
                return Err(Error::InvalidConfig(format!(
                    "PML of {t} cells per side does not fit {n} cells along {axis}"
                )));
            }
        }
        Ok(())
    }

    /// Stretch factors along an axis of `n` cells with step `dl` (meters).
    /// Returns `(centers, edges)`: `centers[i]` at `i + 1/2`, `edges[i]` at `i`
    /// for `i = 0..=n`.
    pub(crate) fn stretch_factors(
        &self,
        boundary: AxisBoundary,
        thickness: usize,
        n: usize,
        dl: f64,
        omega: f64,
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let one = Complex64::new(1.0, 0.0);
        if boundary != AxisBoundary::Pml || omega == 0.0 {
            return (vec![one; n], vec![one; n + 1]);
        }
        let t = thickness as f64;
        let m = self.polynomial_order as f64;
        let c = PhysicalConstants::SI;
        let length = t * dl;
        let sigma_max =
            self.max_conductivity_scale * (m + 1.0) * LOG_REFLECTION / (2.0 * c.eta0() * length);
        let factor = |p: f64| {
            let depth = if p < t {
                (t - p) / t
            } else if p > n as f64 - t {
                (p - (n as f64 - t)) / t
            } else {
                0.0
            };
            let sigma = sigma_max * depth.powf(m);
            Complex64::new(1.0, -sigma / (omega * c.eps0))
        };
        let centers = (0..n).map(|i| factor(i as f64 + 0.5)).collect();
        let edges = (0..=n).map(|i| factor(i as f64)).collect();
        (centers, edges)
    }
}
