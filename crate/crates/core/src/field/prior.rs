use std::f64::consts::PI;

use num_complex::Complex64;

use super::domain::SimDomain;
use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;

/// Wave priors `(P_x, P_z)`: unit phasors whose phase is the optical path
/// `2*pi*sqrt(eps)/lambda` times the cell offset along each axis.
pub fn wave_prior(
    eps: &ComplexGrid2D,
    wavelength: f64,
    domain: &SimDomain,
) -> Result<(ComplexGrid2D, ComplexGrid2D)> {
    if !(wavelength > 0.0) {
        return Err(Error::NonPositiveWavelength(wavelength));
    }
    eps.ensure_shape(domain.rows, domain.cols, "permittivity")?;
    let mut px = ComplexGrid2D::zeros(domain.rows, domain.cols);
    let mut pz = ComplexGrid2D::zeros(domain.rows, domain.cols);
    for i in 0..domain.rows {
        for j in 0..domain.cols {
            let e = eps.get(i, j).re;
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::NonPositivePermittivity {
                    row: i,
                    col: j,
                    value: e,
                });
            }
            let k = 2.0 * PI * e.sqrt() / wavelength;
            px.set(i, j, Complex64::from_polar(1.0, k * i as f64 * domain.dl_x));
            pz.set(i, j, Complex64::from_polar(1.0, k * j as f64 * domain.dl_z));
        }
    }
    Ok((px, pz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::build_domain;

    #[test]
    fn first_column_is_unity() {
        let d = build_domain(1.0, 1.0, 8, 8).unwrap();
        let eps = ComplexGrid2D::from_fn(8, 8, |i, j| Complex64::new(1.0 + (i * j) as f64, 0.0));
        let (px, pz) = wave_prior(&eps, 1.55, &d).unwrap();
        for i in 0..8 {
            assert_eq!(pz.get(i, 0), Complex64::new(1.0, 0.0));
            assert_eq!(px.get(0, i), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn phase_matches_scalar_formula() {
        // dl_z = 0.05, eps 12.11, lambda 1.55, z = 1
        let d = build_domain(0.4, 0.4, 8, 8).unwrap();
        let eps = ComplexGrid2D::from_real(8, 8, &[12.11; 64]).unwrap();
        let (_, pz) = wave_prior(&eps, 1.55, &d).unwrap();
        // oracle: 2*pi*sqrt(12.11)*0.05/1.55 evaluated in extended precision
        let expected = 0.705_326_573_012_880_5;
        assert!((pz.get(3, 1).arg() - expected).abs() < 1e-14);
    }

    #[test]
    fn full_period_returns_to_one() {
        let d = build_domain(2.0, 2.0, 8, 8).unwrap(); // dl = 0.25
        let eps = ComplexGrid2D::from_real(8, 8, &[1.0; 64]).unwrap();
        let (_, pz) = wave_prior(&eps, 1.0, &d).unwrap();
        let p = pz.get(0, 4);
        assert!((p - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_permittivity() {
        let d = build_domain(1.0, 1.0, 4, 4).unwrap();
        let mut eps = ComplexGrid2D::from_real(4, 4, &[2.0; 16]).unwrap();
        eps.set(2, 1, Complex64::new(0.0, 0.0));
        assert!(matches!(
            wave_prior(&eps, 1.55, &d),
            Err(Error::NonPositivePermittivity { row: 2, col: 1, .. })
        ));
    }
}
