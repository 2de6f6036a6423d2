use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::SimulationInstance;
use crate::grid::ComplexGrid2D;

/// Weighted superposition of same-device instances. Sources and targets
/// are combined with the same complex weights; permittivity and priors are
/// kept.
pub fn mixup_superpose(
    samples: &[&SimulationInstance],
    weights: &[Complex64],
) -> Result<SimulationInstance> {
    let first = *samples
        .first()
        .ok_or_else(|| Error::IncompatibleSamples("no samples to superpose".into()))?;
    if samples.len() != weights.len() {
        return Err(Error::IncompatibleSamples(format!(
            "{} samples with {} weights",
            samples.len(),
            weights.len()
        )));
    }
    if weights.iter().all(|w| w.norm_sqr() == 0.0) {
        return Err(Error::IncompatibleSamples("all mix-up weights are zero".into()));
    }
    if samples.iter().any(|s| !s.same_device(first)) {
        return Err(Error::IncompatibleSamples(
            "superposed samples must share device, domain and wavelength".into(),
        ));
    }
    let (m, n) = first.shape();
    let mut src = ComplexGrid2D::zeros(m, n);
    let mut target = first.target.as_ref().map(|_| ComplexGrid2D::zeros(m, n));
    for (s, &w) in samples.iter().zip(weights) {
        src = src.axpy(w, &s.source_field)?;
        match (&mut target, &s.target) {
            (Some(t), Some(st)) => *t = t.axpy(w, st)?,
            (None, None) => {}
            _ => {
                return Err(Error::IncompatibleSamples(
                    "either every sample or none must carry a target".into(),
                ))
            }
        }
    }
    let mut out = first.clone();
    out.source_field = src;
    out.target = target;
    Ok(out)
}
