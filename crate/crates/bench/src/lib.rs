//! Fixtures shared by the criterion benches.

use num_complex::Complex64;
use pace_core::fdfd::{sample_device, simulate_sources, GenerationConfig};
use pace_core::field::{SimulationInstance, SourceSpec};
use pace_core::ActivationTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `[1, channels, rows, cols]` with entries uniform in the unit square.
pub fn activation(channels: usize, rows: usize, cols: usize, seed: u64) -> ActivationTensor {
    let mut r = rng(seed);
    ActivationTensor::from_fn(&[1, channels, rows, cols], |_| {
        Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))
    })
}

/// Desk MMI preset resized to `rows x cols`, first device.
pub fn desk_config(rows: usize, cols: usize) -> GenerationConfig {
    GenerationConfig {
        rows,
        cols,
        ..GenerationConfig::desk_mmi()
    }
}

/// One solved instance of the first desk device, driven from its first port.
pub fn desk_instance(rows: usize, cols: usize) -> SimulationInstance {
    let cfg = desk_config(rows, cols);
    let dev = sample_device(&cfg, 0, 0).expect("desk device");
    let pml = cfg.pml_for(&dev.domain);
    let src = SourceSpec::new(dev.spec.input_ports()[0], dev.wavelength);
    simulate_sources(&dev.spec, &[src], &dev.domain, &pml, &cfg.solver)
        .expect("desk solve")
        .0
}
