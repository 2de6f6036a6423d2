use num_complex::Complex64;
use pace_core::fdfd::{
    assemble_system, solve, AxisBoundary, PhysicalConstants, PmlSpec, SolverConfig,
};
use pace_core::field::build_domain;
use pace_core::ComplexGrid2D;

/// Outcome of one homogeneous plane-wave solve.
pub struct PlaneWaveFit {
    pub dl_um: f64,
    /// Wavenumber fitted from the solved field (rad/m).
    pub k_fit: f64,
    /// Root of `sin^2(k dl / 2) = k0^2 eps dl^2 / 4` (rad/m).
    pub k_discrete: f64,
    /// Continuum wavenumber `k0 sqrt(eps)` (rad/m).
    pub k_exact: f64,
    pub residual: f64,
}

/// Drive a full-width line source in a homogeneous medium that is periodic
/// along x and absorbing along z, then fit the phase slope of the
/// right-going wave between the source and the PML.
pub fn plane_wave_fit(eps_r: f64, wavelength: f64, cells_per_wavelength: usize, rows: usize) -> PlaneWaveFit {
    let lambda_medium = wavelength / eps_r.sqrt();
    let dl = lambda_medium / cells_per_wavelength as f64;
    let pml_cells = 2 * cells_per_wavelength;
    let cols = 2 * pml_cells + 8 * cells_per_wavelength;
    let domain = build_domain(rows as f64 * dl, cols as f64 * dl, rows, cols).unwrap();
    let eps = ComplexGrid2D::from_real(rows, cols, &vec![eps_r; rows * cols]).unwrap();
    let j_src = pml_cells + cells_per_wavelength;
    let src = ComplexGrid2D::from_fn(rows, cols, |_, j| {
        if j == j_src {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let pml = PmlSpec {
        thickness_cells: pml_cells,
        x_boundary: AxisBoundary::Periodic,
        z_boundary: AxisBoundary::Pml,
        ..PmlSpec::default()
    };
    let sys = assemble_system(&eps, wavelength, &domain, &pml, &src).unwrap();
    let sol = solve(&sys, &SolverConfig::default()).unwrap();

    // least-squares slope of the unwrapped phase along row 0
    let lo = j_src + cells_per_wavelength;
    let hi = cols - pml_cells - cells_per_wavelength;
    let mut phase = Vec::with_capacity(hi - lo);
    let mut acc = sol.field.get(0, lo).arg();
    phase.push(acc);
    for j in lo + 1..hi {
        let step = (sol.field.get(0, j) / sol.field.get(0, j - 1)).arg();
        acc += step;
        phase.push(acc);
    }
    let n = phase.len() as f64;
    let mean_j = (n - 1.0) / 2.0;
    let mean_p = phase.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, p) in phase.iter().enumerate() {
        let dj = t as f64 - mean_j;
        num += dj * (p - mean_p);
        den += dj * dj;
    }
    let dl_m = domain.dl_z * 1e-6;
    let k_fit = (num / den / dl_m).abs();

    let c = PhysicalConstants::SI;
    let omega = c.omega_from_wavelength_um(wavelength);
    let k0 = (c.k0_sqr(omega)).sqrt();
    let k_exact = k0 * eps_r.sqrt();
    let k_discrete = 2.0 / dl_m * (k_exact * dl_m / 2.0).asin();
    PlaneWaveFit {
        dl_um: domain.dl_z,
        k_fit,
        k_discrete,
        k_exact,
        residual: sol.residual_norm,
    }
}

/// Observed convergence order of the fitted wavenumber against the
/// continuum value between two resolutions a factor of two apart.
pub fn refinement_order(coarse: &PlaneWaveFit, fine: &PlaneWaveFit) -> f64 {
    let e0 = (coarse.k_fit - coarse.k_exact).abs();
    let e1 = (fine.k_fit - fine.k_exact).abs();
    (e0 / e1).log2() * (coarse.dl_um / fine.dl_um).log2().recip()
}

/// Peak magnitude on the outermost ring of cells relative to the interior
/// peak, for a centered point source with PML on all sides.
pub fn pml_boundary_ratio(rows: usize, cols: usize, pml: PmlSpec) -> f64 {
    let pml_cells = pml.thickness_cells;
    let wavelength = 1.55;
    let dl = wavelength / 20.0;
    let domain = build_domain(rows as f64 * dl, cols as f64 * dl, rows, cols).unwrap();
    let eps = ComplexGrid2D::from_real(rows, cols, &vec![1.0; rows * cols]).unwrap();
    let mut src = ComplexGrid2D::zeros(rows, cols);
    src.set(rows / 2, cols / 2, Complex64::new(1.0, 0.0));
    let sys = assemble_system(&eps, wavelength, &domain, &pml, &src).unwrap();
    let sol = solve(&sys, &SolverConfig::default()).unwrap();
    let f = &sol.field;
    let mut edge: f64 = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            if i == 0 || j == 0 || i == rows - 1 || j == cols - 1 {
                edge = edge.max(f.get(i, j).norm());
            }
        }
    }
    let mut peak: f64 = 0.0;
    for i in pml_cells..rows - pml_cells {
        for j in pml_cells..cols - pml_cells {
            peak = peak.max(f.get(i, j).norm());
        }
    }
    edge / peak
}
