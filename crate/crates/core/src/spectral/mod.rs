//! FFT machinery and truncated spectral integral kernels.
//!
//! All transforms are complex-to-complex. A kernel along an axis of length
//! `L` keeps the `modes` lowest absolute frequencies in the order
//! `0, 1, -1, 2, -2, ...` and zeroes every other bin. Weights of a 1-D kernel
//! are stored as `[groups, modes, in/groups, out/groups]`; channel groups
//! are contiguous blocks.

mod fft;
mod kernel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ActivationTensor;

pub use fft::{fft_axis, ifft_axis};
pub use kernel::{
    cross_axis_apply, cross_axis_forward, cross_axis_vjp, dense_2d_forward, dense_2d_vjp,
    multiply_1d, multiply_1d_vjp, single_axis_factorized, single_axis_forward, single_axis_vjp,
    spectral_multiply_1d,
    CrossAxisKernel, DenseKernel2D, FactorizedKernel, SpectralKernel1D,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Along grid rows (x).
    Vertical,
    /// Along grid columns (z).
    Horizontal,
}

/// Retained mode counts per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub modes_x: usize,
    pub modes_z: usize,
}

impl ModeSpec {
    pub fn new(modes_x: usize, modes_z: usize) -> Self {
        Self { modes_x, modes_z }
    }

    pub fn along(&self, axis: Axis) -> usize {
        match axis {
            Axis::Vertical => self.modes_x,
            Axis::Horizontal => self.modes_z,
        }
    }

    /// Checks `1 <= modes_x <= rows` and `1 <= modes_z <= cols`.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.modes_x == 0 || self.modes_z == 0 || self.modes_x > rows || self.modes_z > cols {
            return Err(Error::ShapeMismatch(format!(
                "modes ({}, {}) do not fit a {rows}x{cols} grid",
                self.modes_x, self.modes_z
            )));
        }
        Ok(())
    }
}

/// Frequency bins kept by a truncated kernel, in retention order.
pub fn retained_bins(len: usize, modes: usize) -> Vec<usize> {
    (0..modes.min(len))
        .map(|r| {
            if r == 0 {
                0
            } else if r % 2 == 1 {
                r.div_ceil(2)
            } else {
                len - r / 2
            }
        })
        .collect()
}

/// Split `[b, c, m, n]` into `groups` contiguous channel blocks.
pub fn grouped_partition(t: &ActivationTensor, groups: usize) -> Result<Vec<ActivationTensor>> {
    let [b, c, m, n] = t.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::IndivisibleChannels {
            channels: c,
            groups,
        });
    }
    let cg = c / groups;
    let plane = m * n;
    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut data = Vec::with_capacity(b * cg * plane);
        for bi in 0..b {
            let start = (bi * c + g * cg) * plane;
            data.extend_from_slice(&t.data()[start..start + cg * plane]);
        }
        out.push(ActivationTensor::from_vec(&[b, cg, m, n], data)?);
    }
    Ok(out)
}

/// Inverse of [`grouped_partition`].
pub fn grouped_merge(blocks: &[ActivationTensor]) -> Result<ActivationTensor> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no channel blocks to merge".into()))?;
    let [b, cg, m, n] = first.dims4()?;
    for blk in blocks {
        blk.ensure_shape(&[b, cg, m, n], "channel block")?;
    }
    let plane = m * n;
    let c = cg * blocks.len();
    let mut data = Vec::with_capacity(b * c * plane);
    for bi in 0..b {
        for blk in blocks {
            let start = bi * cg * plane;
            data.extend_from_slice(&blk.data()[start..start + cg * plane]);
        }
    }
    ActivationTensor::from_vec(&[b, c, m, n], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    DenseFno,
    SingleAxisFactorized,
    GroupedCrossAxis,
}

/// Complex weight count of a spectral kernel:
/// dense `kh*kv*co*ci`, single-axis `(kh+kv)*co*ci`, grouped cross-axis
/// `(kh+kv)*co*ci/g`. The grouped cross-axis kernel composes two square
/// maps, so it needs `c_in == c_out`.
pub fn param_count(
    variant: KernelVariant,
    modes_h: usize,
    modes_v: usize,
    c_in: usize,
    c_out: usize,
    groups: usize,
) -> Result<usize> {
    match variant {
        KernelVariant::DenseFno => Ok(modes_h * modes_v * c_out * c_in),
        KernelVariant::SingleAxisFactorized => Ok((modes_h + modes_v) * c_out * c_in),
        KernelVariant::GroupedCrossAxis => {
            for c in [c_in, c_out] {
                if groups == 0 || c % groups != 0 {
                    return Err(Error::IndivisibleChannels {
                        channels: c,
                        groups,
                    });
                }
            }
            if c_in != c_out {
                return Err(Error::ShapeMismatch(format!(
                    "cross-axis kernel maps {c_in} -> {c_out} channels; it must be square"
                )));
            }
            Ok((modes_h + modes_v) * c_out * c_in / groups)
        }
    }
}

/// Standard deviation of a freshly initialized complex weight.
pub fn init_std(c_in: usize, modes_total: usize, groups: usize) -> f64 {
    (groups as f64 / (c_in * modes_total) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn bins_alternate_sign() {
        assert_eq!(retained_bins(8, 5), vec![0, 1, 7, 2, 6]);
        assert_eq!(retained_bins(5, 5), vec![0, 1, 4, 2, 3]);
        let mut all = retained_bins(12, 12);
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn partition_and_merge() {
        let t = ActivationTensor::from_fn(&[2, 8, 3, 4], |k| Complex64::new(k as f64, 0.0));
        let one = grouped_partition(&t, 1).unwrap();
        assert_eq!(one, vec![t.clone()]);
        let four = grouped_partition(&t, 4).unwrap();
        assert_eq!(four.len(), 4);
        assert_eq!(four[1].shape(), &[2, 2, 3, 4]);
        assert_eq!(four[1].data()[0], Complex64::new(24.0, 0.0));
        assert_eq!(grouped_merge(&four).unwrap(), t);
        let six = ActivationTensor::zeros(&[1, 6, 2, 2]);
        assert_eq!(
            grouped_partition(&six, 4),
            Err(Error::IndivisibleChannels {
                channels: 6,
                groups: 4
            })
        );
    }

    #[test]
    fn formula_examples() {
        use KernelVariant::*;
        assert_eq!(param_count(GroupedCrossAxis, 70, 40, 64, 64, 4).unwrap(), 112_640);
        assert_eq!(param_count(DenseFno, 70, 40, 64, 64, 4).unwrap(), 11_468_800);
        assert_eq!(
            param_count(GroupedCrossAxis, 12, 8, 16, 16, 1).unwrap(),
            param_count(SingleAxisFactorized, 12, 8, 16, 16, 1).unwrap()
        );
        assert!(matches!(
            param_count(GroupedCrossAxis, 3, 3, 6, 6, 4),
            Err(Error::IndivisibleChannels { .. })
        ));
    }
}
