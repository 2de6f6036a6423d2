//! Radial energy spectrum of a 2-D field.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;

pub const SPECTRUM_NORMALIZATION: &str = "|F|^2/(M*N), unnormalized forward DFT";

/// Energy per integer radius around the shifted DC bin. Bin 0 is DC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub energies: Vec<f64>,
    /// Sum of `|F|^2/(M N)` over every frequency.
    pub total_energy: f64,
    pub normalization: String,
}

impl SpectrumReport {
    pub fn bins(&self) -> usize {
        self.energies.len()
    }

    pub fn fraction(&self, bins: impl IntoIterator<Item = usize>) -> f64 {
        let e: f64 = bins.into_iter().filter_map(|b| self.energies.get(b)).sum();
        e / self.total_energy
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,energy,fraction\n");
        for (k, e) in self.energies.iter().enumerate() {
            let f = if self.total_energy > 0.0 { e / self.total_energy } else { 0.0 };
            s.push_str(&format!("{k},{e},{f}\n"));
        }
        s
    }
}

/// Unnormalized 2-D forward DFT, row-major.
pub fn fft2(field: &ComplexGrid2D) -> ComplexGrid2D {
    let (m, n) = field.shape();
    let mut planner = FftPlanner::<f64>::new();
    let mut data = field.data().to_vec();
    let row = planner.plan_fft_forward(n);
    for r in data.chunks_exact_mut(n) {
        row.process(r);
    }
    let col = planner.plan_fft_forward(m);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..n {
        for i in 0..m {
            buf[i] = data[i * n + j];
        }
        col.process(&mut buf);
        for i in 0..m {
            data[i * n + j] = buf[i];
        }
    }
    ComplexGrid2D::from_vec(m, n, data).expect("shape preserved")
}

/// Moves the zero frequency to `(M/2, N/2)`.
pub fn fftshift(f: &ComplexGrid2D) -> ComplexGrid2D {
    let (m, n) = f.shape();
    ComplexGrid2D::from_fn(m, n, |i, j| f.get((i + m - m / 2) % m, (j + n - n / 2) % n))
}

/// Bins `|F|^2/(M N)` by `round(distance to the shifted DC)`.
pub fn radial_spectrum(field: &ComplexGrid2D) -> Result<SpectrumReport> {
    let (m, n) = field.shape();
    if m == 0 || n == 0 {
        return Err(Error::ShapeMismatch("empty field".into()));
    }
    if !field.is_finite() {
        return Err(Error::Format("field has non-finite entries".into()));
    }
    let spec = fftshift(&fft2(field));
    let (ci, cj) = ((m / 2) as f64, (n / 2) as f64);
    let max_r = (ci.max((m - 1) as f64 - ci).powi(2) + cj.max((n - 1) as f64 - cj).powi(2))
        .sqrt()
        .round() as usize;
    let mut energies = vec![0.0; max_r + 1];
    let scale = 1.0 / (m * n) as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let e = spec.get(i, j).norm_sqr() * scale;
            let r = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt().round() as usize;
            energies[r] += e;
            total += e;
        }
    }
    Ok(SpectrumReport {
        energies,
        total_energy: total,
        normalization: SPECTRUM_NORMALIZATION.into(),
    })
}

/// Relative gap between the binned spectral energy and `sum |u|^2`.
pub fn parseval_error(field: &ComplexGrid2D, report: &SpectrumReport) -> f64 {
    let spatial = field.norm_sqr();
    let binned: f64 = report.energies.iter().sum();
    (binned - spatial).abs() / spatial.max(f64::MIN_POSITIVE)
}
