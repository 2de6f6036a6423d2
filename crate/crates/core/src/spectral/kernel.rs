use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::fft::transform_in_place;
use super::{init_std, retained_bins, Axis, ModeSpec};
use crate::error::{Error, Result};
use crate::tensor::{ActivationTensor, ComplexArray};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Shape facts of a 1-D kernel applied to a `[b, c, m, n]` tensor.
#[derive(Clone, Copy)]
struct Layout1d {
    batch: usize,
    rows: usize,
    cols: usize,
    groups: usize,
    modes: usize,
    in_g: usize,
    out_g: usize,
    axis: Axis,
}

impl Layout1d {
    fn new(weights: &ComplexArray, axis: Axis, x_dims: [usize; 4]) -> Result<Self> {
        let [groups, modes, in_g, out_g] = weights.dims4()?;
        let [batch, c, rows, cols] = x_dims;
        if groups * in_g != c {
            return Err(Error::ShapeMismatch(format!(
                "kernel expects {} input channels, tensor has {c}",
                groups * in_g
            )));
        }
        let len = match axis {
            Axis::Vertical => rows,
            Axis::Horizontal => cols,
        };
        if modes == 0 || modes > len {
            return Err(Error::ShapeMismatch(format!(
                "{modes} modes do not fit an axis of length {len}"
            )));
        }
        Ok(Self {
            batch,
            rows,
            cols,
            groups,
            modes,
            in_g,
            out_g,
            axis,
        })
    }

    fn len(&self) -> usize {
        match self.axis {
            Axis::Vertical => self.rows,
            Axis::Horizontal => self.cols,
        }
    }

    fn others(&self) -> usize {
        match self.axis {
            Axis::Vertical => self.cols,
            Axis::Horizontal => self.rows,
        }
    }

    #[inline]
    fn at(&self, bin: usize, p: usize) -> usize {
        match self.axis {
            Axis::Vertical => bin * self.cols + p,
            Axis::Horizontal => p * self.cols + bin,
        }
    }

    fn c_in(&self) -> usize {
        self.groups * self.in_g
    }

    fn c_out(&self) -> usize {
        self.groups * self.out_g
    }

    fn plane(&self) -> usize {
        self.rows * self.cols
    }
}

/// `Y = W X` on the retained bins of an axis-transformed tensor.
fn mix_forward(w: &[Complex64], lay: &Layout1d, xhat: &[Complex64]) -> Vec<Complex64> {
    let plane = lay.plane();
    let (c_in, c_out) = (lay.c_in(), lay.c_out());
    let mut yhat = vec![ZERO; lay.batch * c_out * plane];
    let bins = retained_bins(lay.len(), lay.modes);
    let mut xin = vec![ZERO; lay.in_g];
    for b in 0..lay.batch {
        for g in 0..lay.groups {
            for (r, &k) in bins.iter().enumerate() {
                let wb = &w[(g * lay.modes + r) * lay.in_g * lay.out_g..][..lay.in_g * lay.out_g];
                for p in 0..lay.others() {
                    let pos = lay.at(k, p);
                    for (ci, v) in xin.iter_mut().enumerate() {
                        *v = xhat[(b * c_in + g * lay.in_g + ci) * plane + pos];
                    }
                    for co in 0..lay.out_g {
                        let mut acc = ZERO;
                        for (ci, v) in xin.iter().enumerate() {
                            acc += wb[ci * lay.out_g + co] * v;
                        }
                        yhat[(b * c_out + g * lay.out_g + co) * plane + pos] = acc;
                    }
                }
            }
        }
    }
    yhat
}

/// Adjoint of [`mix_forward`] in `X` (`W^H G`) and the weight gradient
/// `sum conj(X) G`.
fn mix_backward(
    w: &[Complex64],
    lay: &Layout1d,
    xhat: &[Complex64],
    gyhat: &[Complex64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let plane = lay.plane();
    let (c_in, c_out) = (lay.c_in(), lay.c_out());
    let mut gxhat = vec![ZERO; lay.batch * c_in * plane];
    let mut gw = vec![ZERO; w.len()];
    let bins = retained_bins(lay.len(), lay.modes);
    let mut gin = vec![ZERO; lay.out_g];
    for b in 0..lay.batch {
        for g in 0..lay.groups {
            for (r, &k) in bins.iter().enumerate() {
                let off = (g * lay.modes + r) * lay.in_g * lay.out_g;
                let wb = &w[off..off + lay.in_g * lay.out_g];
                for p in 0..lay.others() {
                    let pos = lay.at(k, p);
                    for (co, v) in gin.iter_mut().enumerate() {
                        *v = gyhat[(b * c_out + g * lay.out_g + co) * plane + pos];
                    }
                    for ci in 0..lay.in_g {
                        let xi = (b * c_in + g * lay.in_g + ci) * plane + pos;
                        let xc = xhat[xi].conj();
                        let mut acc = ZERO;
                        for (co, gv) in gin.iter().enumerate() {
                            acc += wb[ci * lay.out_g + co].conj() * gv;
                            gw[off + ci * lay.out_g + co] += xc * gv;
                        }
                        gxhat[xi] = acc;
                    }
                }
            }
        }
    }
    (gxhat, gw)
}

/// `IFFT_axis(W . FFT_axis(x))` with weights `[groups, modes, in/g, out/g]`.
pub fn multiply_1d(
    weights: &ComplexArray,
    axis: Axis,
    x: &ActivationTensor,
) -> Result<ActivationTensor> {
    let dims = x.dims4()?;
    let lay = Layout1d::new(weights, axis, dims)?;
    let mut xhat = x.data().to_vec();
    transform_in_place(&mut xhat, dims, axis, false);
    let mut y = mix_forward(weights.data(), &lay, &xhat);
    let out_dims = [lay.batch, lay.c_out(), lay.rows, lay.cols];
    transform_in_place(&mut y, out_dims, axis, true);
    ActivationTensor::from_vec(&out_dims, y)
}

/// Gradients of a real loss through [`multiply_1d`], given the output
/// gradient `gy` (convention `dL/dRe + j dL/dIm`). Returns `(gx, gw)`.
pub fn multiply_1d_vjp(
    weights: &ComplexArray,
    axis: Axis,
    x: &ActivationTensor,
    gy: &ActivationTensor,
) -> Result<(ActivationTensor, ComplexArray)> {
    let dims = x.dims4()?;
    let lay = Layout1d::new(weights, axis, dims)?;
    let out_dims = [lay.batch, lay.c_out(), lay.rows, lay.cols];
    gy.ensure_shape(&out_dims, "output gradient")?;
    let mut xhat = x.data().to_vec();
    transform_in_place(&mut xhat, dims, axis, false);
    // adjoint of the 1/L-scaled inverse transform is F/L
    let mut gyhat = gy.data().to_vec();
    transform_in_place(&mut gyhat, out_dims, axis, false);
    let inv_len = 1.0 / lay.len() as f64;
    for z in gyhat.iter_mut() {
        *z *= inv_len;
    }
    let (mut gx, gw) = mix_backward(weights.data(), &lay, &xhat, &gyhat);
    // adjoint of the forward transform is L * IFFT
    transform_in_place(&mut gx, dims, axis, true);
    let len = lay.len() as f64;
    for z in gx.iter_mut() {
        *z *= len;
    }
    Ok((
        ActivationTensor::from_vec(&dims, gx)?,
        ComplexArray::from_vec(weights.shape(), gw)?,
    ))
}

/// Single-axis factorized integral: `S_v(x) + S_h(x)`.
pub fn single_axis_forward(
    w_v: &ComplexArray,
    w_h: &ComplexArray,
    x: &ActivationTensor,
) -> Result<ActivationTensor> {
    multiply_1d(w_v, Axis::Vertical, x)?.add(&multiply_1d(w_h, Axis::Horizontal, x)?)
}

pub fn single_axis_vjp(
    w_v: &ComplexArray,
    w_h: &ComplexArray,
    x: &ActivationTensor,
    gy: &ActivationTensor,
) -> Result<(ActivationTensor, ComplexArray, ComplexArray)> {
    let (mut gx, gwv) = multiply_1d_vjp(w_v, Axis::Vertical, x, gy)?;
    let (gx_h, gwh) = multiply_1d_vjp(w_h, Axis::Horizontal, x, gy)?;
    gx.add_assign(&gx_h);
    Ok((gx, gwv, gwh))
}

/// Cross-axis factorized integral: `S_h(S_v(x))`.
pub fn cross_axis_forward(
    w_v: &ComplexArray,
    w_h: &ComplexArray,
    x: &ActivationTensor,
) -> Result<ActivationTensor> {
    multiply_1d(w_h, Axis::Horizontal, &multiply_1d(w_v, Axis::Vertical, x)?)
}

pub fn cross_axis_vjp(
    w_v: &ComplexArray,
    w_h: &ComplexArray,
    x: &ActivationTensor,
    gy: &ActivationTensor,
) -> Result<(ActivationTensor, ComplexArray, ComplexArray)> {
    let mid = multiply_1d(w_v, Axis::Vertical, x)?;
    let (g_mid, gwh) = multiply_1d_vjp(w_h, Axis::Horizontal, &mid, gy)?;
    let (gx, gwv) = multiply_1d_vjp(w_v, Axis::Vertical, x, &g_mid)?;
    Ok((gx, gwv, gwh))
}

fn dense_layout(weights: &ComplexArray, x_dims: [usize; 4]) -> Result<([usize; 4], Vec<usize>, Vec<usize>)> {
    let [mx, mz, c_in, c_out] = weights.dims4()?;
    let [b, c, rows, cols] = x_dims;
    if c != c_in {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {c_in} input channels, tensor has {c}"
        )));
    }
    ModeSpec::new(mx, mz).validate(rows, cols)?;
    Ok((
        [b, c_out, rows, cols],
        retained_bins(rows, mx),
        retained_bins(cols, mz),
    ))
}

/// Dense 2-D spectral kernel with weights `[modes_x, modes_z, in, out]`.
pub fn dense_2d_forward(weights: &ComplexArray, x: &ActivationTensor) -> Result<ActivationTensor> {
    let dims = x.dims4()?;
    let (out_dims, bx, bz) = dense_layout(weights, dims)?;
    let [b, c_in, rows, cols] = dims;
    let c_out = out_dims[1];
    let plane = rows * cols;
    let mut xhat = x.data().to_vec();
    transform_in_place(&mut xhat, dims, Axis::Vertical, false);
    transform_in_place(&mut xhat, dims, Axis::Horizontal, false);
    let w = weights.data();
    let mut yhat = vec![ZERO; b * c_out * plane];
    for bi in 0..b {
        for (rx, &kx) in bx.iter().enumerate() {
            for (rz, &kz) in bz.iter().enumerate() {
                let pos = kx * cols + kz;
                let wb = &w[(rx * bz.len() + rz) * c_in * c_out..][..c_in * c_out];
                for co in 0..c_out {
                    let mut acc = ZERO;
                    for ci in 0..c_in {
                        acc += wb[ci * c_out + co] * xhat[(bi * c_in + ci) * plane + pos];
                    }
                    yhat[(bi * c_out + co) * plane + pos] = acc;
                }
            }
        }
    }
    transform_in_place(&mut yhat, out_dims, Axis::Vertical, true);
    transform_in_place(&mut yhat, out_dims, Axis::Horizontal, true);
    ActivationTensor::from_vec(&out_dims, yhat)
}

pub fn dense_2d_vjp(
    weights: &ComplexArray,
    x: &ActivationTensor,
    gy: &ActivationTensor,
) -> Result<(ActivationTensor, ComplexArray)> {
    let dims = x.dims4()?;
    let (out_dims, bx, bz) = dense_layout(weights, dims)?;
    gy.ensure_shape(&out_dims, "output gradient")?;
    let [b, c_in, rows, cols] = dims;
    let c_out = out_dims[1];
    let plane = rows * cols;
    let mut xhat = x.data().to_vec();
    transform_in_place(&mut xhat, dims, Axis::Vertical, false);
    transform_in_place(&mut xhat, dims, Axis::Horizontal, false);
    let mut gyhat = gy.data().to_vec();
    transform_in_place(&mut gyhat, out_dims, Axis::Vertical, false);
    transform_in_place(&mut gyhat, out_dims, Axis::Horizontal, false);
    let s = 1.0 / plane as f64;
    let w = weights.data();
    let mut gxhat = vec![ZERO; b * c_in * plane];
    let mut gw = vec![ZERO; w.len()];
    for bi in 0..b {
        for (rx, &kx) in bx.iter().enumerate() {
            for (rz, &kz) in bz.iter().enumerate() {
                let pos = kx * cols + kz;
                let off = (rx * bz.len() + rz) * c_in * c_out;
                for ci in 0..c_in {
                    let xi = (bi * c_in + ci) * plane + pos;
                    let xc = xhat[xi].conj();
                    let mut acc = ZERO;
                    for co in 0..c_out {
                        let g = gyhat[(bi * c_out + co) * plane + pos] * s;
                        acc += w[off + ci * c_out + co].conj() * g;
                        gw[off + ci * c_out + co] += xc * g;
                    }
                    gxhat[xi] = acc;
                }
            }
        }
    }
    transform_in_place(&mut gxhat, dims, Axis::Vertical, true);
    transform_in_place(&mut gxhat, dims, Axis::Horizontal, true);
    for z in gxhat.iter_mut() {
        *z *= plane as f64;
    }
    Ok((
        ActivationTensor::from_vec(&dims, gxhat)?,
        ComplexArray::from_vec(weights.shape(), gw)?,
    ))
}

fn random_weights(shape: &[usize], std: f64, rng: &mut impl Rng) -> ComplexArray {
    // each component carries half the variance so E|w|^2 = std^2
    let normal = Normal::new(0.0, std / std::f64::consts::SQRT_2).expect("finite std");
    ComplexArray::from_fn(shape, |_| Complex64::new(normal.sample(rng), normal.sample(rng)))
}

/// Truncated 1-D spectral kernel along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralKernel1D {
    pub axis: Axis,
    /// `[groups, modes, in/groups, out/groups]`.
    pub weights: ComplexArray,
}

impl SpectralKernel1D {
    fn check(c_in: usize, c_out: usize, groups: usize) -> Result<()> {
        for c in [c_in, c_out] {
            if groups == 0 || c % groups != 0 {
                return Err(Error::IndivisibleChannels {
                    channels: c,
                    groups,
                });
            }
        }
        Ok(())
    }

    pub fn zeros(axis: Axis, modes: usize, c_in: usize, c_out: usize, groups: usize) -> Result<Self> {
        Self::check(c_in, c_out, groups)?;
        Ok(Self {
            axis,
            weights: ComplexArray::zeros(&[groups, modes, c_in / groups, c_out / groups]),
        })
    }

    /// Random kernel with the given per-entry standard deviation.
    pub fn random(
        axis: Axis,
        modes: usize,
        c_in: usize,
        c_out: usize,
        groups: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::check(c_in, c_out, groups)?;
        Ok(Self {
            axis,
            weights: random_weights(&[groups, modes, c_in / groups, c_out / groups], std, rng),
        })
    }

    /// Identity on every retained mode.
    pub fn identity(axis: Axis, modes: usize, channels: usize, groups: usize) -> Result<Self> {
        let mut k = Self::zeros(axis, modes, channels, channels, groups)?;
        let cg = channels / groups;
        let w = k.weights.data_mut();
        for g in 0..groups {
            for r in 0..modes {
                for c in 0..cg {
                    w[((g * modes + r) * cg + c) * cg + c] = Complex64::new(1.0, 0.0);
                }
            }
        }
        Ok(k)
    }

    pub fn groups(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn modes(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.groups() * self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.groups() * self.weights.shape()[3]
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, t: &ActivationTensor) -> Result<ActivationTensor> {
        multiply_1d(&self.weights, self.axis, t)
    }
}

pub fn spectral_multiply_1d(kernel: &SpectralKernel1D, t: &ActivationTensor) -> Result<ActivationTensor> {
    kernel.apply(t)
}

/// Per-axis kernels whose outputs are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedKernel {
    pub kernel_v: SpectralKernel1D,
    pub kernel_h: SpectralKernel1D,
}

impl FactorizedKernel {
    pub fn random(
        modes: ModeSpec,
        c_in: usize,
        c_out: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = init_std(c_in, modes.modes_x + modes.modes_z, groups);
        Ok(Self {
            kernel_v: SpectralKernel1D::random(Axis::Vertical, modes.modes_x, c_in, c_out, groups, std, rng)?,
            kernel_h: SpectralKernel1D::random(Axis::Horizontal, modes.modes_z, c_in, c_out, groups, std, rng)?,
        })
    }

    pub fn weight_count(&self) -> usize {
        self.kernel_v.weight_count() + self.kernel_h.weight_count()
    }
}

pub fn single_axis_factorized(k: &FactorizedKernel, t: &ActivationTensor) -> Result<ActivationTensor> {
    if k.kernel_v.axis != Axis::Vertical || k.kernel_h.axis != Axis::Horizontal {
        return Err(Error::ShapeMismatch("kernels must be (vertical, horizontal)".into()));
    }
    single_axis_forward(&k.kernel_v.weights, &k.kernel_h.weights, t)
}

/// Vertical kernel followed by horizontal kernel, both `C -> C` with `g`
/// channel groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAxisKernel {
    pub kernel_v: SpectralKernel1D,
    pub kernel_h: SpectralKernel1D,
    pub groups: usize,
}

impl CrossAxisKernel {
    pub fn new(kernel_v: SpectralKernel1D, kernel_h: SpectralKernel1D) -> Result<Self> {
        let groups = kernel_v.groups();
        let c = kernel_v.in_channels();
        if kernel_v.axis != Axis::Vertical || kernel_h.axis != Axis::Horizontal {
            return Err(Error::ShapeMismatch("kernels must be (vertical, horizontal)".into()));
        }
        if kernel_h.groups() != groups
            || kernel_v.out_channels() != c
            || kernel_h.in_channels() != c
            || kernel_h.out_channels() != c
        {
            return Err(Error::ShapeMismatch(
                "cross-axis kernels must share groups and channel width".into(),
            ));
        }
        Ok(Self {
            kernel_v,
            kernel_h,
            groups,
        })
    }

    pub fn random(modes: ModeSpec, channels: usize, groups: usize, rng: &mut impl Rng) -> Result<Self> {
        let std = init_std(channels, modes.modes_x + modes.modes_z, groups);
        Self::new(
            SpectralKernel1D::random(Axis::Vertical, modes.modes_x, channels, channels, groups, std, rng)?,
            SpectralKernel1D::random(Axis::Horizontal, modes.modes_z, channels, channels, groups, std, rng)?,
        )
    }

    pub fn weight_count(&self) -> usize {
        self.kernel_v.weight_count() + self.kernel_h.weight_count()
    }
}

pub fn cross_axis_apply(k: &CrossAxisKernel, t: &ActivationTensor) -> Result<ActivationTensor> {
    cross_axis_forward(&k.kernel_v.weights, &k.kernel_h.weights, t)
}

/// Full 2-D truncated spectral kernel (FNO layer).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel2D {
    /// `[modes_x, modes_z, in, out]`.
    pub weights: ComplexArray,
}

impl DenseKernel2D {
    pub fn random(modes: ModeSpec, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / (c_in * modes.modes_x * modes.modes_z) as f64).sqrt();
        Self {
            weights: random_weights(&[modes.modes_x, modes.modes_z, c_in, c_out], std, rng),
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, t: &ActivationTensor) -> Result<ActivationTensor> {
        dense_2d_forward(&self.weights, t)
    }
}
