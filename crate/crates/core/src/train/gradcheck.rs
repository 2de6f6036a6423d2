use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{loss_and_gradients, TrainMode};
use crate::error::Result;
use crate::field::SimulationInstance;
use crate::model::{Architecture, ParameterStore};

/// Central differences on the deterministic objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor of the relative error; exact agreement counts as 0.
    pub floor: f64,
    /// Check at most this many real coordinates (sampled); `None` checks all.
    pub max_coordinates: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-8,
            max_coordinates: Some(400),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    /// Fraction of coordinates with relative error at most `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.entries.is_empty() {
            return 1.0;
        }
        let ok = self.entries.iter().filter(|e| e.rel_error <= tol).count();
        ok as f64 / self.entries.len() as f64
    }

    /// At least `fraction` within `tol`, and every coordinate within `tol_all`.
    pub fn passes(&self, tol: f64, fraction: f64, tol_all: f64) -> bool {
        self.fraction_within(tol) >= fraction && self.max_rel_error() <= tol_all
    }
}

/// Compares reverse-mode gradients with central differences, coordinate
/// by coordinate. Complex parameters contribute their real and imaginary
/// parts separately.
pub fn gradient_check(
    arch: &Architecture,
    params: &ParameterStore,
    inst: &SimulationInstance,
    mode: TrainMode,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradients(arch, params, inst, mode, None)?;
    let mut coords = Vec::new();
    for (e, (name, p)) in params.iter().enumerate() {
        for k in 0..p.real_count() {
            coords.push((e, name.to_string(), k));
        }
    }
    if let Some(limit) = cfg.max_coordinates.filter(|&l| l < coords.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = sample(&mut rng, coords.len(), limit).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i].clone()).collect();
    }
    let objective = |p: &ParameterStore| -> Result<f64> {
        Ok(loss_and_gradients(arch, p, inst, mode, None)?.0.total())
    };
    let entries = coords
        .into_par_iter()
        .map(|(_, name, k)| {
            let mut p = params.clone();
            let x0 = params.by_name(&name).expect("listed").real_at(k);
            p.by_name_mut(&name).expect("listed").set_real_at(k, x0 + cfg.step);
            let fp = objective(&p)?;
            p.by_name_mut(&name).expect("listed").set_real_at(k, x0 - cfg.step);
            let fm = objective(&p)?;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let analytic = grads.by_name(&name).expect("same layout").real_at(k);
            let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
            let rel_error = if analytic == numeric {
                0.0
            } else {
                (analytic - numeric).abs() / denom
            };
            Ok(GradCheckEntry {
                name,
                index: k,
                analytic,
                numeric,
                rel_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport { entries })
}
