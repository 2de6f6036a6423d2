use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Axis;
use crate::error::Result;
use crate::tensor::ActivationTensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place transform of a `[b, c, m, n]` buffer along `axis`. The forward
/// transform is unnormalized; the inverse is scaled by `1/len`.
pub(crate) fn transform_in_place(
    data: &mut [Complex64],
    dims: [usize; 4],
    axis: Axis,
    inverse: bool,
) {
    let [_, _, m, n] = dims;
    if data.is_empty() {
        return;
    }
    let len = match axis {
        Axis::Vertical => m,
        Axis::Horizontal => n,
    };
    let fft = plan(len, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    match axis {
        Axis::Horizontal => fft.process_with_scratch(data, &mut scratch),
        Axis::Vertical => {
            let mut t = vec![Complex64::new(0.0, 0.0); m * n];
            for plane in data.chunks_exact_mut(m * n) {
                for i in 0..m {
                    for j in 0..n {
                        t[j * m + i] = plane[i * n + j];
                    }
                }
                fft.process_with_scratch(&mut t, &mut scratch);
                for i in 0..m {
                    for j in 0..n {
                        plane[i * n + j] = t[j * m + i];
                    }
                }
            }
        }
    }
    if inverse {
        let s = 1.0 / len as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }
}

/// Unnormalized DFT along one axis of a `[b, c, m, n]` tensor.
pub fn fft_axis(t: &ActivationTensor, axis: Axis) -> Result<ActivationTensor> {
    let dims = t.dims4()?;
    let mut out = t.clone();
    transform_in_place(out.data_mut(), dims, axis, false);
    Ok(out)
}

/// Inverse of [`fft_axis`] (scaled by `1/len`).
pub fn ifft_axis(t: &ActivationTensor, axis: Axis) -> Result<ActivationTensor> {
    let dims = t.dims4()?;
    let mut out = t.clone();
    transform_in_place(out.data_mut(), dims, axis, true);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn direct_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn random(dims: [usize; 4], seed: u64) -> ActivationTensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ActivationTensor::from_fn(&dims, |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn matches_direct_dft_on_8x8() {
        let x = random([1, 2, 8, 8], 1);
        for axis in [Axis::Vertical, Axis::Horizontal] {
            let f = fft_axis(&x, axis).unwrap();
            for c in 0..2 {
                for p in 0..8 {
                    let line: Vec<Complex64> = (0..8)
                        .map(|q| match axis {
                            Axis::Vertical => x.data()[c * 64 + q * 8 + p],
                            Axis::Horizontal => x.data()[c * 64 + p * 8 + q],
                        })
                        .collect();
                    let d = direct_dft(&line);
                    for q in 0..8 {
                        let got = match axis {
                            Axis::Vertical => f.data()[c * 64 + q * 8 + p],
                            Axis::Horizontal => f.data()[c * 64 + p * 8 + q],
                        };
                        assert!((got - d[q]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn round_trip_on_test_grid() {
        for &m in &[4, 5, 8, 12, 16] {
            for &n in &[4, 5, 8, 12, 16] {
                let x = random([2, 3, m, n], (m * 31 + n) as u64);
                for axis in [Axis::Vertical, Axis::Horizontal] {
                    let back = ifft_axis(&fft_axis(&x, axis).unwrap(), axis).unwrap();
                    let rel = back.max_abs_diff(&x) / x.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
                    assert!(rel < 1e-12, "{m}x{n} {axis:?}: {rel:e}");
                }
            }
        }
    }

    #[test]
    fn constant_and_single_harmonic() {
        let c = Complex64::new(0.7, -0.2);
        let x = ActivationTensor::from_fn(&[1, 1, 4, 6], |_| c);
        let f = fft_axis(&x, Axis::Horizontal).unwrap();
        for i in 0..4 {
            assert!((f.data()[i * 6] - c * 6.0).norm() < 1e-14);
            for j in 1..6 {
                assert!(f.data()[i * 6 + j].norm() < 1e-14);
            }
        }
        let k = 2;
        let h = ActivationTensor::from_fn(&[1, 1, 4, 6], |idx| {
            Complex64::from_polar(1.0, 2.0 * PI * (k * (idx % 6)) as f64 / 6.0)
        });
        let f = fft_axis(&h, Axis::Horizontal).unwrap();
        for j in 0..6 {
            let v = f.data()[j].norm();
            if j == k {
                assert!((v - 6.0).abs() < 1e-12);
            } else {
                assert!(v < 1e-12);
            }
        }
    }
}
