use serde::{Deserialize, Serialize};

use super::domain::SimDomain;
use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    EtchedMmi,
    Metaline,
}

/// Axis-aligned rectangle, `[x, z]` center and `[x, z]` size in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: [f64; 2],
    pub size: [f64; 2],
}

impl Rect {
    pub fn from_bounds(x0: f64, x1: f64, z0: f64, z1: f64) -> Self {
        Rect {
            center: [0.5 * (x0 + x1), 0.5 * (z0 + z1)],
            size: [x1 - x0, z1 - z0],
        }
    }

    pub fn x_range(&self) -> (f64, f64) {
        (
            self.center[0] - 0.5 * self.size[0],
            self.center[0] + 0.5 * self.size[0],
        )
    }

    pub fn z_range(&self) -> (f64, f64) {
        (
            self.center[1] - 0.5 * self.size[1],
            self.center[1] + 0.5 * self.size[1],
        )
    }

    /// Half-open membership test, so abutting rectangles never share a cell.
    #[inline]
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (x0, x1) = self.x_range();
        let (z0, z1) = self.z_range();
        x >= x0 && x < x1 && z >= z0 && z < z1
    }

    pub fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    fn inside(&self, outer: &Rect) -> bool {
        const TOL: f64 = 1e-9;
        let (x0, x1) = self.x_range();
        let (z0, z1) = self.z_range();
        let (ox0, ox1) = outer.x_range();
        let (oz0, oz1) = outer.z_range();
        x0 >= ox0 - TOL && x1 <= ox1 + TOL && z0 >= oz0 - TOL && z1 <= oz1 + TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortSide {
    Left,
    Right,
}

/// Straight access waveguide attached to one side of the body. The guide
/// runs from the body edge to the domain boundary; an optional taper is a
/// wider rectangle directly adjacent to the body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub side: PortSide,
    pub center_x: f64,
    pub width: f64,
    #[serde(default)]
    pub taper_length: f64,
    #[serde(default)]
    pub taper_width: f64,
    /// z coordinate of the injection plane used when this port is driven.
    pub source_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub kind: DeviceKind,
    pub body: Rect,
    pub ports: Vec<Port>,
    /// Etched cavities (MMI) or meta-atoms (metaline).
    pub rects: Vec<Rect>,
    pub eps_background: f64,
    pub eps_etch: f64,
    /// Permittivity outside the body and waveguides; `None` means `eps_etch`.
    #[serde(default)]
    pub eps_cladding: Option<f64>,
}

impl DeviceSpec {
    pub fn cladding(&self) -> f64 {
        self.eps_cladding.unwrap_or(self.eps_etch)
    }

    pub fn validate(&self) -> Result<()> {
        for (idx, &value) in [self.eps_background, self.eps_etch, self.cladding()]
            .iter()
            .enumerate()
        {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositivePermittivity {
                    row: 0,
                    col: idx,
                    value,
                });
            }
        }
        if !(self.body.size[0] > 0.0 && self.body.size[1] > 0.0) {
            return Err(Error::InvalidConfig("device body has empty extent".into()));
        }
        for (index, r) in self.rects.iter().enumerate() {
            if !(r.size[0] > 0.0 && r.size[1] > 0.0) || !r.inside(&self.body) {
                return Err(Error::RectangleOutOfBody { index });
            }
        }
        for p in &self.ports {
            if !(p.width > 0.0) {
                return Err(Error::InvalidConfig("port width must be positive".into()));
            }
        }
        Ok(())
    }

    /// Waveguide and taper rectangles of every port, clipped to the domain.
    pub fn port_rects(&self, domain: &SimDomain) -> Vec<Rect> {
        let (bz0, bz1) = self.body.z_range();
        let mut out = Vec::with_capacity(2 * self.ports.len());
        for p in &self.ports {
            let half = 0.5 * p.width;
            let (x0, x1) = (p.center_x - half, p.center_x + half);
            let taper = p.taper_length.max(0.0);
            let (guide, tap) = match p.side {
                PortSide::Left => (
                    (0.0, bz0 - taper),
                    (bz0 - taper, bz0),
                ),
                PortSide::Right => (
                    (bz1 + taper, domain.l_z),
                    (bz1, bz1 + taper),
                ),
            };
            if guide.1 > guide.0 {
                out.push(Rect::from_bounds(x0, x1, guide.0, guide.1));
            }
            if taper > 0.0 && p.taper_width > 0.0 {
                let th = 0.5 * p.taper_width;
                out.push(Rect::from_bounds(
                    p.center_x - th,
                    p.center_x + th,
                    tap.0,
                    tap.1,
                ));
            }
        }
        out
    }

    pub fn input_ports(&self) -> Vec<usize> {
        self.ports
            .iter()
            .enumerate()
            .filter(|(_, p)| p.side == PortSide::Left)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Cell-center rasterization of the relative permittivity.
pub fn rasterize_device(spec: &DeviceSpec, domain: &SimDomain) -> Result<ComplexGrid2D> {
    spec.validate()?;
    let guides = spec.port_rects(domain);
    let cladding = spec.cladding();
    let mut values = Vec::with_capacity(domain.cells());
    for i in 0..domain.rows {
        let x = domain.x_center(i);
        for j in 0..domain.cols {
            let z = domain.z_center(j);
            let eps = if spec.rects.iter().any(|r| r.contains(x, z)) {
                spec.eps_etch
            } else if spec.body.contains(x, z) || guides.iter().any(|r| r.contains(x, z)) {
                spec.eps_background
            } else {
                cladding
            };
            values.push(eps);
        }
    }
    ComplexGrid2D::from_real(domain.rows, domain.cols, &values)
}
