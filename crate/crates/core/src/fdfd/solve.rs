use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::banded::BandedLu;
use super::iterative::bicgstab;
use super::system::{residual, YeeSystem};
use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Required relative residual; `None` picks 1e-10 (direct) or 1e-8 (iterative).
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Iterative refinement sweeps after a direct solve.
    pub refinement_steps: usize,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Direct,
            tolerance: None,
            refinement_steps: 3,
            max_iterations: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn iterative() -> Self {
        Self {
            method: SolverMethod::Iterative,
            ..Self::default()
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(match self.method {
            SolverMethod::Direct => 1e-10,
            SolverMethod::Iterative => 1e-8,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub field: ComplexGrid2D,
    pub residual_norm: f64,
}

pub fn solve(system: &YeeSystem, cfg: &SolverConfig) -> Result<FieldSolution> {
    match cfg.method {
        SolverMethod::Direct => {
            let lu = BandedLu::factor(&system.matrix, Some((system.domain.rows, system.domain.cols)))?;
            solve_factored(system, &lu, cfg)
        }
        SolverMethod::Iterative => {
            let tol = cfg.tolerance();
            let (x, _) = bicgstab(&system.matrix, &system.rhs, tol, cfg.max_iterations)?;
            finish(system, x, tol)
        }
    }
}

/// Solve with an existing factorization of `system.matrix`; used when
/// several right-hand sides share one device.
pub(crate) fn solve_factored(
    system: &YeeSystem,
    lu: &BandedLu,
    cfg: &SolverConfig,
) -> Result<FieldSolution> {
    let tol = cfg.tolerance();
    let mut x = lu.solve(&system.rhs);
    let mut res = residual(system, &x);
    for _ in 0..cfg.refinement_steps {
        if res <= 0.1 * tol {
            break;
        }
        let ax = system.matrix.mul_vec(&x);
        let r: Vec<Complex64> = system.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = lu.solve(&r);
        let candidate: Vec<Complex64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        let next = residual(system, &candidate);
        if next >= res {
            break;
        }
        x = candidate;
        res = next;
    }
    finish(system, x, tol)
}

fn finish(system: &YeeSystem, x: Vec<Complex64>, tol: f64) -> Result<FieldSolution> {
    let residual_norm = residual(system, &x);
    if !(residual_norm <= tol) {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: residual_norm,
        });
    }
    let field = ComplexGrid2D::from_vec(system.domain.rows, system.domain.cols, x)?;
    Ok(FieldSolution {
        field,
        residual_norm,
    })
}
