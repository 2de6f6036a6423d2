use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretized rectangular simulation domain.
///
/// `x` runs down the rows (height `l_x`), `z` along the columns (length
/// `l_z`). Lengths are in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDomain {
    pub l_x: f64,
    pub l_z: f64,
    pub rows: usize,
    pub cols: usize,
    pub dl_x: f64,
    pub dl_z: f64,
}

pub fn build_domain(l_x: f64, l_z: f64, rows: usize, cols: usize) -> Result<SimDomain> {
    if !(l_x > 0.0 && l_z > 0.0) || !l_x.is_finite() || !l_z.is_finite() {
        return Err(Error::NonPositiveExtent { l_x, l_z });
    }
    if rows < 4 || cols < 4 {
        return Err(Error::GridTooSmall { rows, cols });
    }
    Ok(SimDomain {
        l_x,
        l_z,
        rows,
        cols,
        dl_x: l_x / rows as f64,
        dl_z: l_z / cols as f64,
    })
}

impl SimDomain {
    /// Same physical extent sampled on a different grid.
    pub fn resampled(&self, rows: usize, cols: usize) -> Result<SimDomain> {
        build_domain(self.l_x, self.l_z, rows, cols)
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell-center coordinate along x of row `i`.
    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dl_x
    }

    /// Cell-center coordinate along z of column `j`.
    #[inline]
    pub fn z_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dl_z
    }
}
