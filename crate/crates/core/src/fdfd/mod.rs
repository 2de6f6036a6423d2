//! Finite-difference frequency-domain solver for the scalar H_y form of the
//! curl-of-curl Maxwell equation, used as ground truth and as a dataset
//! generator.
//!
//! The discrete operator on cell `(i, j)` is
//!
//! ```text
//! (1/s_x) d_x (eps^-1 (1/s_x) d_x H) + (1/s_z) d_z (eps^-1 (1/s_z) d_z H) + w^2 mu0 eps0 H = j w J
//! ```
//!
//! with `eps^-1` sampled on cell edges (harmonic average of the two cells)
//! and complex coordinate stretching `s = 1 - j sigma / (w eps0)` inside the
//! absorbing layers.

mod banded;
mod constants;
mod generate;
mod iterative;
mod pml;
mod simulate;
mod solve;
mod sparse;
mod system;

pub use banded::BandedLu;
pub use constants::PhysicalConstants;
pub use generate::{
    assign_splits, generate_dataset, mixup_spot_check, sample_device, worker_threads,
    GeneratedDataset, GeneratedRecord, GenerationConfig, RecordStatus, SampledDevice, Span,
    Split, CAVITY_RULE,
};
pub use iterative::bicgstab;
pub use pml::{AxisBoundary, PmlSpec};
pub use simulate::{simulate, simulate_sources};
pub use solve::{solve, FieldSolution, SolverConfig, SolverMethod};
pub use sparse::CsrMatrix;
pub use system::{assemble_system, assemble_system_omega, residual, YeeSystem};
