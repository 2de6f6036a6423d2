use serde::{Deserialize, Serialize};

use super::domain::SimDomain;
use super::prior::wave_prior;
use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;

/// One PDE observation `(eps_r, H_y^J, P_x, P_z)` with an optional target field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationInstance {
    pub domain: SimDomain,
    pub wavelength: f64,
    pub eps: ComplexGrid2D,
    pub source_field: ComplexGrid2D,
    pub prior_x: ComplexGrid2D,
    pub prior_z: ComplexGrid2D,
    pub target: Option<ComplexGrid2D>,
}

pub fn assemble_instance(
    eps: ComplexGrid2D,
    source_field: ComplexGrid2D,
    wavelength: f64,
    domain: SimDomain,
    target: Option<ComplexGrid2D>,
) -> Result<SimulationInstance> {
    let (m, n) = (domain.rows, domain.cols);
    eps.ensure_shape(m, n, "permittivity")?;
    source_field.ensure_shape(m, n, "source field")?;
    if let Some(t) = &target {
        t.ensure_shape(m, n, "target field")?;
        if !t.is_finite() {
            return Err(Error::Format("target field has non-finite entries".into()));
        }
    }
    if !source_field.is_finite() {
        return Err(Error::Format("source field has non-finite entries".into()));
    }
    let (prior_x, prior_z) = wave_prior(&eps, wavelength, &domain)?;
    Ok(SimulationInstance {
        domain,
        wavelength,
        eps,
        source_field,
        prior_x,
        prior_z,
        target,
    })
}

impl SimulationInstance {
    pub fn shape(&self) -> (usize, usize) {
        (self.domain.rows, self.domain.cols)
    }

    pub fn target(&self) -> Result<&ComplexGrid2D> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::Format("instance has no target field".into()))
    }

    /// True when both instances describe the same device at the same wavelength.
    pub fn same_device(&self, other: &Self) -> bool {
        self.domain == other.domain && self.wavelength == other.wavelength && self.eps == other.eps
    }
}
