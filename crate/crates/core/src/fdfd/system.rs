use num_complex::Complex64;

use super::constants::PhysicalConstants;
use super::pml::{AxisBoundary, PmlSpec};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::field::SimDomain;
use crate::grid::ComplexGrid2D;

const UM: f64 = 1e-6;

/// Discretized `A x = b` for one frequency. Unknowns follow the row-major
/// cell order of [`ComplexGrid2D`].
#[derive(Debug, Clone)]
pub struct YeeSystem {
    pub dim: usize,
    pub matrix: CsrMatrix,
    pub rhs: Vec<Complex64>,
    pub domain: SimDomain,
    pub omega: f64,
}

/// Assemble the system for a vacuum wavelength in micrometers.
pub fn assemble_system(
    eps: &ComplexGrid2D,
    wavelength: f64,
    domain: &SimDomain,
    pml: &PmlSpec,
    source_field: &ComplexGrid2D,
) -> Result<YeeSystem> {
    if !(wavelength > 0.0) {
        return Err(Error::NonPositiveWavelength(wavelength));
    }
    let omega = PhysicalConstants::SI.omega_from_wavelength_um(wavelength);
    assemble_system_omega(eps, omega, domain, pml, source_field)
}

/// Assemble the system for an explicit angular frequency (rad/s).
pub fn assemble_system_omega(
    eps: &ComplexGrid2D,
    omega: f64,
    domain: &SimDomain,
    pml: &PmlSpec,
    source_field: &ComplexGrid2D,
) -> Result<YeeSystem> {
    let (m, n) = (domain.rows, domain.cols);
    eps.ensure_shape(m, n, "permittivity")?;
    source_field.ensure_shape(m, n, "source field")?;
    pml.validate(m, n)?;
    let mut inv_eps = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let e = eps.get(i, j);
            if !(e.re > 0.0) || !e.re.is_finite() {
                return Err(Error::NonPositivePermittivity {
                    row: i,
                    col: j,
                    value: e.re,
                });
            }
            inv_eps.push(1.0 / e.re);
        }
    }

    let dl_x = domain.dl_x * UM;
    let dl_z = domain.dl_z * UM;
    let (tx, tz) = pml.thickness();
    let (sx_c, sx_e) = pml.stretch_factors(pml.x_boundary, tx, m, dl_x, omega);
    let (sz_c, sz_e) = pml.stretch_factors(pml.z_boundary, tz, n, dl_z, omega);
    let k0_sqr = PhysicalConstants::SI.k0_sqr(omega);

    let mut rows = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let p = i * n + j;
            let mut row: Vec<(usize, Complex64)> = Vec::with_capacity(5);
            let mut diag = Complex64::new(k0_sqr, 0.0);

            // x direction: neighbours (i-1, j) and (i+1, j)
            let lower = neighbour(i, m, -1, pml.x_boundary);
            let upper = neighbour(i, m, 1, pml.x_boundary);
            let ie_minus = edge_inv_eps(inv_eps[p], lower.map(|q| inv_eps[q * n + j]));
            let ie_plus = edge_inv_eps(inv_eps[p], upper.map(|q| inv_eps[q * n + j]));
            let c_minus = ie_minus / (sx_c[i] * sx_e[i] * dl_x * dl_x);
            let c_plus = ie_plus / (sx_c[i] * sx_e[i + 1] * dl_x * dl_x);
            diag -= c_minus + c_plus;
            if let Some(q) = lower {
                row.push((q * n + j, c_minus));
            }
            if let Some(q) = upper {
                row.push((q * n + j, c_plus));
            }

            // z direction: neighbours (i, j-1) and (i, j+1)
            let left = neighbour(j, n, -1, pml.z_boundary);
            let right = neighbour(j, n, 1, pml.z_boundary);
            let ie_minus = edge_inv_eps(inv_eps[p], left.map(|q| inv_eps[i * n + q]));
            let ie_plus = edge_inv_eps(inv_eps[p], right.map(|q| inv_eps[i * n + q]));
            let c_minus = ie_minus / (sz_c[j] * sz_e[j] * dl_z * dl_z);
            let c_plus = ie_plus / (sz_c[j] * sz_e[j + 1] * dl_z * dl_z);
            diag -= c_minus + c_plus;
            if let Some(q) = left {
                row.push((i * n + q, c_minus));
            }
            if let Some(q) = right {
                row.push((i * n + q, c_plus));
            }

            row.push((p, diag));
            rows.push(row);
        }
    }
    let matrix = CsrMatrix::from_rows(m * n, rows);
    let j_omega = Complex64::new(0.0, omega);
    let rhs = source_field.data().iter().map(|s| j_omega * s).collect();
    Ok(YeeSystem {
        dim: m * n,
        matrix,
        rhs,
        domain: *domain,
        omega,
    })
}

fn neighbour(i: usize, len: usize, step: isize, boundary: AxisBoundary) -> Option<usize> {
    let k = i as isize + step;
    if k >= 0 && (k as usize) < len {
        Some(k as usize)
    } else if boundary == AxisBoundary::Periodic {
        Some(k.rem_euclid(len as isize) as usize)
    } else {
        None
    }
}

/// Edge sample of `1/eps`: mean of the two cell inverses (harmonic mean of
/// `eps`); at a closed boundary the cell's own value.
fn edge_inv_eps(here: f64, there: Option<f64>) -> f64 {
    match there {
        Some(t) => 0.5 * (here + t),
        None => here,
    }
}

/// Relative residual `||A x - b|| / ||b||`, or `||A x||` when `b = 0`.
pub fn residual(system: &YeeSystem, x: &[Complex64]) -> f64 {
    let ax = system.matrix.mul_vec(x);
    let b_norm = system.rhs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let r_norm = ax
        .iter()
        .zip(&system.rhs)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if b_norm == 0.0 {
        r_norm
    } else {
        r_norm / b_norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::build_domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn homogeneous_interior_row_is_five_point_helmholtz() {
        let d = build_domain(1.6, 3.2, 16, 32).unwrap();
        let eps = ComplexGrid2D::from_real(16, 32, &vec![1.0; 16 * 32]).unwrap();
        let src = ComplexGrid2D::zeros(16, 32);
        let sys = assemble_system(&eps, 1.55, &d, &PmlSpec::none(), &src).unwrap();
        let (dx, dz) = (d.dl_x * 1e-6, d.dl_z * 1e-6);
        let c = PhysicalConstants::SI;
        let w = c.omega_from_wavelength_um(1.55);
        let p = 7 * 32 + 11;
        let expect_diag = -(2.0 / (dx * dx) + 2.0 / (dz * dz)) + w * w * c.mu0 * c.eps0;
        let tol = 1e-12 * expect_diag.abs().max(2.0 / (dx * dx));
        assert!((sys.matrix.get(p, p).re - expect_diag).abs() < tol);
        assert_eq!(sys.matrix.get(p, p).im, 0.0);
        for (q, expect) in [
            (p - 32, 1.0 / (dx * dx)),
            (p + 32, 1.0 / (dx * dx)),
            (p - 1, 1.0 / (dz * dz)),
            (p + 1, 1.0 / (dz * dz)),
        ] {
            assert!((sys.matrix.get(p, q).re - expect).abs() < 1e-12 * expect);
        }
        assert_eq!(sys.matrix.row_nnz(p), 5);
        // zero source gives zero rhs
        assert!(sys.rhs.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn at_most_five_nonzeros_per_row() {
        let d = build_domain(2.0, 3.0, 20, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..600).map(|_| if rng.gen_bool(0.3) { 2.07 } else { 12.11 }).collect();
        let eps = ComplexGrid2D::from_real(20, 30, &vals).unwrap();
        for pml in [
            PmlSpec::with_thickness(5),
            PmlSpec {
                x_boundary: AxisBoundary::Periodic,
                ..PmlSpec::with_thickness(5)
            },
        ] {
            let sys = assemble_system(&eps, 1.55, &d, &pml, &ComplexGrid2D::zeros(20, 30)).unwrap();
            for r in 0..sys.dim {
                assert!(sys.matrix.row_nnz(r) <= 5);
            }
        }
    }

    #[test]
    fn zero_permittivity_rejected() {
        let d = build_domain(1.0, 1.0, 8, 8).unwrap();
        let mut eps = ComplexGrid2D::from_real(8, 8, &[1.0; 64]).unwrap();
        eps.set(3, 3, Complex64::new(0.0, 0.0));
        let r = assemble_system(&eps, 1.55, &d, &PmlSpec::none(), &ComplexGrid2D::zeros(8, 8));
        assert!(matches!(r, Err(Error::NonPositivePermittivity { .. })));
    }

    #[test]
    fn residual_matches_dense_evaluation() {
        let d = build_domain(0.8, 0.8, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(1.0..12.0)).collect();
        let eps = ComplexGrid2D::from_real(8, 8, &vals).unwrap();
        let src = ComplexGrid2D::from_fn(8, 8, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let pml = PmlSpec {
            thickness_cells: 0,
            x_boundary: AxisBoundary::Periodic,
            z_boundary: AxisBoundary::Dirichlet,
            ..PmlSpec::default()
        };
        let sys = assemble_system(&eps, 1.55, &d, &pml, &src).unwrap();
        let x: Vec<Complex64> = (0..64)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        // dense brute force
        let dense = sys.matrix.to_dense();
        let mut r2 = 0.0;
        let mut b2 = 0.0;
        for i in 0..64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..64 {
                acc += dense[i * 64 + j] * x[j];
            }
            r2 += (acc - sys.rhs[i]).norm_sqr();
            b2 += sys.rhs[i].norm_sqr();
        }
        let expected = (r2 / b2).sqrt();
        assert!((residual(&sys, &x) - expected).abs() <= 1e-12 * expected);
    }
}
