use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::device::{DeviceSpec, PortSide};
use super::domain::SimDomain;
use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;

/// Default admissible wavelength window in micrometers.
pub const WAVELENGTH_BOUNDS: (f64, f64) = (1.4, 1.7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceProfile {
    FundamentalGaussianApprox,
    #[default]
    RaisedCosine,
}

impl SourceProfile {
    /// Window value at normalized offset `t = (x - center) / width`.
    fn window(self, t: f64) -> f64 {
        match self {
            SourceProfile::RaisedCosine => {
                if t.abs() > 0.5 {
                    0.0
                } else {
                    (PI * t).cos().powi(2)
                }
            }
            SourceProfile::FundamentalGaussianApprox => (-(2.0 * t).powi(2)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub port: usize,
    pub wavelength: f64,
    pub amplitude: Complex64,
    #[serde(default)]
    pub profile: SourceProfile,
}

impl SourceSpec {
    pub fn new(port: usize, wavelength: f64) -> Self {
        Self {
            port,
            wavelength,
            amplitude: Complex64::new(1.0, 0.0),
            profile: SourceProfile::RaisedCosine,
        }
    }

    pub fn validate(&self, bounds: (f64, f64)) -> Result<()> {
        if self.amplitude.norm() == 0.0 {
            return Err(Error::ZeroAmplitude);
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::NonPositiveWavelength(self.wavelength));
        }
        if self.wavelength < bounds.0 || self.wavelength > bounds.1 {
            return Err(Error::InvalidConfig(format!(
                "wavelength {} outside [{}, {}]",
                self.wavelength, bounds.0, bounds.1
            )));
        }
        Ok(())
    }

    /// Angular frequency in rad/s for the vacuum wavelength in micrometers.
    pub fn omega(&self) -> f64 {
        crate::fdfd::PhysicalConstants::SI.omega_from_wavelength_um(self.wavelength)
    }
}

/// Injection aperture of a port: the source occupies one column at
/// `source_z` across `[center_x - width/2, center_x + width/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortGeometry {
    pub center_x: f64,
    pub width: f64,
    pub source_z: f64,
    pub side: PortSide,
}

impl DeviceSpec {
    pub fn port_geometry(&self) -> Vec<PortGeometry> {
        self.ports
            .iter()
            .map(|p| PortGeometry {
                center_x: p.center_x,
                width: p.width,
                source_z: p.source_z,
                side: p.side,
            })
            .collect()
    }
}

/// Masked source field for one driven port, unit peak times `amplitude`.
pub fn mask_source(
    spec: &SourceSpec,
    domain: &SimDomain,
    ports: &[PortGeometry],
) -> Result<ComplexGrid2D> {
    if spec.amplitude.norm() == 0.0 {
        return Err(Error::ZeroAmplitude);
    }
    let port = ports.get(spec.port).ok_or(Error::UnknownPort {
        port: spec.port,
        available: ports.len(),
    })?;
    let col = ((port.source_z / domain.dl_z).floor().max(0.0) as usize).min(domain.cols - 1);

    let mut cells: Vec<(usize, f64)> = (0..domain.rows)
        .filter_map(|i| {
            let t = (domain.x_center(i) - port.center_x) / port.width;
            (t.abs() <= 0.5).then(|| (i, spec.profile.window(t)))
        })
        .collect();
    if cells.is_empty() {
        // aperture narrower than a cell: drive the nearest row
        let i = ((port.center_x / domain.dl_x).floor().max(0.0) as usize).min(domain.rows - 1);
        cells.push((i, 1.0));
    }
    let peak = cells.iter().map(|c| c.1).fold(0.0, f64::max);
    let mut grid = ComplexGrid2D::zeros(domain.rows, domain.cols);
    for (i, w) in cells {
        grid.set(i, col, spec.amplitude * (w / peak));
    }
    Ok(grid)
}

/// Superposition of several masked sources.
pub fn mask_sources(
    specs: &[SourceSpec],
    domain: &SimDomain,
    ports: &[PortGeometry],
) -> Result<ComplexGrid2D> {
    let mut total = ComplexGrid2D::zeros(domain.rows, domain.cols);
    for s in specs {
        let m = mask_source(s, domain, ports)?;
        total = total.axpy(Complex64::new(1.0, 0.0), &m)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::build_domain;

    fn ports() -> Vec<PortGeometry> {
        vec![
            PortGeometry {
                center_x: 3.5,
                width: 7.0,
                source_z: 1.5,
                side: PortSide::Left,
            },
            PortGeometry {
                center_x: 11.5,
                width: 5.0,
                source_z: 2.5,
                side: PortSide::Left,
            },
        ]
    }

    #[test]
    fn zero_amplitude_is_rejected() {
        let d = build_domain(16.0, 8.0, 16, 8).unwrap();
        let mut s = SourceSpec::new(0, 1.55);
        s.amplitude = Complex64::new(0.0, 0.0);
        assert_eq!(mask_source(&s, &d, &ports()), Err(Error::ZeroAmplitude));
        assert_eq!(s.validate(WAVELENGTH_BOUNDS), Err(Error::ZeroAmplitude));
    }

    #[test]
    fn unknown_port() {
        let d = build_domain(16.0, 8.0, 16, 8).unwrap();
        assert_eq!(
            mask_source(&SourceSpec::new(5, 1.55), &d, &ports()),
            Err(Error::UnknownPort {
                port: 5,
                available: 2
            })
        );
    }

    #[test]
    fn raised_cosine_over_seven_cells() {
        let d = build_domain(16.0, 8.0, 16, 8).unwrap();
        let mut s = SourceSpec::new(0, 1.55);
        s.amplitude = Complex64::new(0.0, 2.0);
        let m = mask_source(&s, &d, &ports()).unwrap();
        // aperture rows 0..=6, center row 3, column 1
        let mags: Vec<f64> = (0..7).map(|i| m.get(i, 1).norm()).collect();
        assert!((mags[3] - 2.0).abs() < 1e-12);
        assert!(mags[0] < 0.05 * 2.0 && mags[6] < 0.05 * 2.0);
        assert!(mags[0] > 0.0);
        for i in 0..3 {
            assert!(mags[i] < mags[i + 1]);
            assert!((mags[i] - mags[6 - i]).abs() < 1e-12);
        }
        let nonzero = m.data().iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 7);
        for i in 0..16 {
            for j in 0..8 {
                if j != 1 {
                    assert_eq!(m.get(i, j).norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn disjoint_port_masks_superpose() {
        let d = build_domain(16.0, 8.0, 16, 8).unwrap();
        let a = SourceSpec::new(0, 1.55);
        let mut b = SourceSpec::new(1, 1.55);
        b.amplitude = Complex64::new(0.3, -0.7);
        b.profile = SourceProfile::FundamentalGaussianApprox;
        let ma = mask_source(&a, &d, &ports()).unwrap();
        let mb = mask_source(&b, &d, &ports()).unwrap();
        let sum = ma.axpy(Complex64::new(1.0, 0.0), &mb).unwrap();
        assert_eq!(sum, mask_sources(&[a, b], &d, &ports()).unwrap());
    }
}
