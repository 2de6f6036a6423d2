use super::banded::BandedLu;
use super::pml::PmlSpec;
use super::solve::{solve, solve_factored, FieldSolution, SolverConfig};
use super::system::assemble_system;
use crate::error::{Error, Result};
use crate::field::{
    assemble_instance, mask_source, mask_sources, rasterize_device, DeviceSpec, SimDomain,
    SimulationInstance, SourceSpec,
};

/// Rasterize `spec`, drive one port and solve for the H_y field.
pub fn simulate(
    spec: &DeviceSpec,
    source: &SourceSpec,
    domain: &SimDomain,
    pml: &PmlSpec,
) -> Result<SimulationInstance> {
    simulate_sources(spec, std::slice::from_ref(source), domain, pml, &SolverConfig::default())
        .map(|(inst, _)| inst)
}

/// Drive several ports at once (same wavelength) and solve once.
pub fn simulate_sources(
    spec: &DeviceSpec,
    sources: &[SourceSpec],
    domain: &SimDomain,
    pml: &PmlSpec,
    cfg: &SolverConfig,
) -> Result<(SimulationInstance, FieldSolution)> {
    let first = sources
        .first()
        .ok_or_else(|| Error::InvalidConfig("at least one source is required".into()))?;
    let wavelength = first.wavelength;
    if sources.iter().any(|s| s.wavelength != wavelength) {
        return Err(Error::InvalidConfig(
            "superposed sources must share one wavelength".into(),
        ));
    }
    let eps = rasterize_device(spec, domain)?;
    let src = mask_sources(sources, domain, &spec.port_geometry())?;
    let system = assemble_system(&eps, wavelength, domain, pml, &src)?;
    let sol = solve(&system, cfg)?;
    let inst = assemble_instance(eps, src, wavelength, *domain, Some(sol.field.clone()))?;
    Ok((inst, sol))
}

/// Solve every listed port of one device at one wavelength with a single
/// factorization. Entry `k` is `Err` if port `k` failed its residual check.
pub(crate) fn simulate_ports(
    spec: &DeviceSpec,
    ports: &[usize],
    wavelength: f64,
    domain: &SimDomain,
    pml: &PmlSpec,
    cfg: &SolverConfig,
) -> Result<Vec<Result<(SimulationInstance, f64)>>> {
    let eps = rasterize_device(spec, domain)?;
    let geometry = spec.port_geometry();
    let mut systems = Vec::with_capacity(ports.len());
    for &port in ports {
        let src = mask_source(&SourceSpec::new(port, wavelength), domain, &geometry)?;
        systems.push((assemble_system(&eps, wavelength, domain, pml, &src)?, src));
    }
    let Some((first, _)) = systems.first() else {
        return Ok(Vec::new());
    };
    let lu = BandedLu::factor(&first.matrix, Some((domain.rows, domain.cols)))?;
    Ok(systems
        .into_iter()
        .map(|(system, src)| {
            let sol = solve_factored(&system, &lu, cfg)?;
            let inst =
                assemble_instance(eps.clone(), src, wavelength, *domain, Some(sol.field))?;
            Ok((inst, sol.residual_norm))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdfd::{assemble_system, residual, AxisBoundary};
    use crate::field::{build_domain, DeviceKind, Port, PortSide, Rect};
    use num_complex::Complex64;

    fn two_port_mmi() -> (DeviceSpec, SimDomain) {
        let d = build_domain(3.2, 6.4, 32, 64).unwrap();
        let port = |x: f64| Port {
            side: PortSide::Left,
            center_x: x,
            width: 0.5,
            taper_length: 0.0,
            taper_width: 0.0,
            source_z: 1.2,
        };
        let spec = DeviceSpec {
            kind: DeviceKind::EtchedMmi,
            body: Rect::from_bounds(0.6, 2.6, 2.0, 4.4),
            ports: vec![port(1.1), port(2.1)],
            rects: vec![Rect::from_bounds(1.4, 1.8, 3.0, 3.4)],
            eps_background: 12.11,
            eps_etch: 2.07,
            eps_cladding: None,
        };
        (spec, d)
    }

    #[test]
    fn superposition_holds() {
        let (spec, d) = two_port_mmi();
        let pml = PmlSpec::with_thickness(6);
        let a = SourceSpec::new(0, 1.55);
        let mut b = SourceSpec::new(1, 1.55);
        b.amplitude = Complex64::new(0.0, 1.0);
        let ua = simulate(&spec, &a, &d, &pml).unwrap();
        let ub = simulate(&spec, &b, &d, &pml).unwrap();
        let (uab, _) =
            simulate_sources(&spec, &[a, b], &d, &pml, &SolverConfig::default()).unwrap();
        let sum = ua.target().unwrap().axpy(Complex64::new(1.0, 0.0), ub.target().unwrap()).unwrap();
        let diff = sum.axpy(Complex64::new(-1.0, 0.0), uab.target().unwrap()).unwrap();
        assert!(diff.norm_sqr().sqrt() <= 1e-8 * uab.target().unwrap().norm_sqr().sqrt());
    }

    #[test]
    fn shared_factorization_matches_individual_solves() {
        let (spec, d) = two_port_mmi();
        let pml = PmlSpec::with_thickness(6);
        let out = simulate_ports(&spec, &[0, 1], 1.55, &d, &pml, &SolverConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        for (k, r) in out.into_iter().enumerate() {
            let (inst, res) = r.unwrap();
            assert!(res <= 1e-10);
            let single = simulate(&spec, &SourceSpec::new(k, 1.55), &d, &pml).unwrap();
            assert_eq!(inst.eps, single.eps);
            let sys =
                assemble_system(&inst.eps, 1.55, &d, &pml, &inst.source_field).unwrap();
            assert!(residual(&sys, inst.target().unwrap().data()) <= 1e-10);
        }
    }

    #[test]
    fn mixed_wavelengths_rejected() {
        let (spec, d) = two_port_mmi();
        let pml = PmlSpec {
            x_boundary: AxisBoundary::Pml,
            ..PmlSpec::with_thickness(6)
        };
        let r = simulate_sources(
            &spec,
            &[SourceSpec::new(0, 1.55), SourceSpec::new(1, 1.56)],
            &d,
            &pml,
            &SolverConfig::default(),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
