//! Direct spatial-domain forms of the spectral kernels. Every kernel is
//! expanded to an explicit circular-convolution stencil
//! `K[co][ci][sx][sz]` and applied by brute-force summation.

use std::f64::consts::TAU;

use num_complex::Complex64;
use pace_core::spectral::{retained_bins, CrossAxisKernel, DenseKernel2D, FactorizedKernel, SpectralKernel1D};
use pace_core::ActivationTensor;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `[c_out][c_in][m][n]`, flattened.
pub struct Stencil {
    pub c_out: usize,
    pub c_in: usize,
    pub m: usize,
    pub n: usize,
    pub k: Vec<Complex64>,
}

impl Stencil {
    fn zeros(c_out: usize, c_in: usize, m: usize, n: usize) -> Self {
        Self {
            c_out,
            c_in,
            m,
            n,
            k: vec![ZERO; c_out * c_in * m * n],
        }
    }

    fn at(&mut self, co: usize, ci: usize, sx: usize, sz: usize) -> &mut Complex64 {
        &mut self.k[((co * self.c_in + ci) * self.m + sx) * self.n + sz]
    }

    fn get(&self, co: usize, ci: usize, sx: usize, sz: usize) -> Complex64 {
        self.k[((co * self.c_in + ci) * self.m + sx) * self.n + sz]
    }

    /// `y[b][co](i, j) = sum K[co][ci](sx, sz) x[b][ci](i - sx, j - sz)`.
    pub fn convolve(&self, x: &ActivationTensor) -> ActivationTensor {
        let [b, c, m, n] = x.dims4().unwrap();
        assert_eq!((c, m, n), (self.c_in, self.m, self.n));
        let xd = x.data();
        ActivationTensor::from_fn(&[b, self.c_out, m, n], |idx| {
            let j = idx % n;
            let i = (idx / n) % m;
            let co = (idx / (m * n)) % self.c_out;
            let bi = idx / (self.c_out * m * n);
            let mut acc = ZERO;
            for ci in 0..c {
                for sx in 0..m {
                    for sz in 0..n {
                        let xi = (i + m - sx) % m;
                        let xj = (j + n - sz) % n;
                        acc += self.get(co, ci, sx, sz) * xd[((bi * c + ci) * m + xi) * n + xj];
                    }
                }
            }
            acc
        })
    }
}

fn phase(bin: usize, s: usize, len: usize) -> Complex64 {
    Complex64::from_polar(1.0, TAU * (bin * s % len) as f64 / len as f64)
}

/// 1-D kernel as a dense `[c_out][c_in][len]` table; channel pairs in
/// different groups are zero.
fn table_1d(k: &SpectralKernel1D, len: usize) -> (usize, usize, Vec<Complex64>) {
    let [g, modes, cig, cog] = k.weights.dims4().unwrap();
    let (ci_all, co_all) = (g * cig, g * cog);
    let bins = retained_bins(len, modes);
    let w = k.weights.data();
    let mut t = vec![ZERO; co_all * ci_all * len];
    for grp in 0..g {
        for a in 0..cig {
            for o in 0..cog {
                let (ci, co) = (grp * cig + a, grp * cog + o);
                for s in 0..len {
                    let mut acc = ZERO;
                    for (r, &bin) in bins.iter().enumerate() {
                        acc += w[((grp * modes + r) * cig + a) * cog + o] * phase(bin, s, len);
                    }
                    t[(co * ci_all + ci) * len + s] = acc / len as f64;
                }
            }
        }
    }
    (co_all, ci_all, t)
}

pub fn dense(k: &DenseKernel2D, m: usize, n: usize) -> Stencil {
    let [mx, mz, c_in, c_out] = k.weights.dims4().unwrap();
    let (bx, bz) = (retained_bins(m, mx), retained_bins(n, mz));
    let w = k.weights.data();
    let mut st = Stencil::zeros(c_out, c_in, m, n);
    for co in 0..c_out {
        for ci in 0..c_in {
            for sx in 0..m {
                for sz in 0..n {
                    let mut acc = ZERO;
                    for (rx, &kx) in bx.iter().enumerate() {
                        for (rz, &kz) in bz.iter().enumerate() {
                            acc += w[((rx * mz + rz) * c_in + ci) * c_out + co] * phase(kx, sx, m) * phase(kz, sz, n);
                        }
                    }
                    *st.at(co, ci, sx, sz) = acc / (m * n) as f64;
                }
            }
        }
    }
    st
}

/// Sum of a vertical line stencil and a horizontal line stencil.
pub fn single_axis(k: &FactorizedKernel, m: usize, n: usize) -> Stencil {
    let (co_v, ci_v, tv) = table_1d(&k.kernel_v, m);
    let (co_h, ci_h, th) = table_1d(&k.kernel_h, n);
    assert_eq!((co_v, ci_v), (co_h, ci_h));
    let mut st = Stencil::zeros(co_v, ci_v, m, n);
    for co in 0..co_v {
        for ci in 0..ci_v {
            for sx in 0..m {
                *st.at(co, ci, sx, 0) += tv[(co * ci_v + ci) * m + sx];
            }
            for sz in 0..n {
                *st.at(co, ci, 0, sz) += th[(co * ci_h + ci) * n + sz];
            }
        }
    }
    st
}

/// Explicit full-domain kernel of the vertical-then-horizontal composition:
/// `K[co][ci](sx, sz) = sum_c Kh[co][c](sz) Kv[c][ci](sx)`.
pub fn cross_axis(k: &CrossAxisKernel, m: usize, n: usize) -> Stencil {
    let (c_mid, ci_all, tv) = table_1d(&k.kernel_v, m);
    let (co_all, c_mid_h, th) = table_1d(&k.kernel_h, n);
    assert_eq!(c_mid, c_mid_h);
    let mut st = Stencil::zeros(co_all, ci_all, m, n);
    for co in 0..co_all {
        for ci in 0..ci_all {
            for sx in 0..m {
                for sz in 0..n {
                    let mut acc = ZERO;
                    for c in 0..c_mid {
                        acc += th[(co * c_mid + c) * n + sz] * tv[(c * ci_all + ci) * m + sx];
                    }
                    *st.at(co, ci, sx, sz) = acc;
                }
            }
        }
    }
    st
}
