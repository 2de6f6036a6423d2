//! Raw kernels on `[channels, rows, cols]` real buffers.

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row range `i` such that `0 <= i + off < len`, and the matching source start.
#[inline]
fn valid(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off.max(0)).max(lo as isize) as usize;
    (lo, hi)
}

/// Zero-padded "same" correlation with an odd `k x k` kernel.
/// `w` is `[co, ci, k, k]`, `b` is `[co]`.
pub(crate) fn conv_forward(
    x: &[f64],
    ci: usize,
    rows: usize,
    cols: usize,
    w: &[f64],
    b: &[f64],
    co: usize,
    k: usize,
) -> Vec<f64> {
    let plane = rows * cols;
    let r = (k / 2) as isize;
    let mut out = vec![0.0; co * plane];
    for o in 0..co {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(b[o]);
        for c in 0..ci {
            let src = &x[c * plane..(c + 1) * plane];
            for dy in 0..k {
                let oy = dy as isize - r;
                let (i0, i1) = valid(rows, oy);
                for dx in 0..k {
                    let ox = dx as isize - r;
                    let wv = w[((o * ci + c) * k + dy) * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (j0, j1) = valid(cols, ox);
                    for i in i0..i1 {
                        let si = (i as isize + oy) as usize;
                        let drow = &mut dst[i * cols + j0..i * cols + j1];
                        let sstart = (si * cols) as isize + j0 as isize + ox;
                        let srow = &src[sstart as usize..sstart as usize + (j1 - j0)];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward of [`conv_forward`]: accumulates into `gx`, `gw`, `gb`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    ci: usize,
    rows: usize,
    cols: usize,
    w: &[f64],
    co: usize,
    k: usize,
    gy: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let plane = rows * cols;
    let r = (k / 2) as isize;
    for o in 0..co {
        let g = &gy[o * plane..(o + 1) * plane];
        gb[o] += g.iter().sum::<f64>();
        for c in 0..ci {
            let src = &x[c * plane..(c + 1) * plane];
            let gsrc = &mut gx[c * plane..(c + 1) * plane];
            for dy in 0..k {
                let oy = dy as isize - r;
                let (i0, i1) = valid(rows, oy);
                for dx in 0..k {
                    let ox = dx as isize - r;
                    let widx = ((o * ci + c) * k + dy) * k + dx;
                    let wv = w[widx];
                    let (j0, j1) = valid(cols, ox);
                    let mut acc = 0.0;
                    for i in i0..i1 {
                        let si = (i as isize + oy) as usize;
                        let grow = &g[i * cols + j0..i * cols + j1];
                        let sstart = ((si * cols) as isize + j0 as isize + ox) as usize;
                        let srow = &src[sstart..sstart + (j1 - j0)];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        let gxrow = &mut gsrc[sstart..sstart + (j1 - j0)];
                        for (d, s) in gxrow.iter_mut().zip(grow) {
                            *d += wv * s;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

/// Per-channel normalization over the spatial plane with affine output.
/// Returns `(y, xhat, inv_std)`.
pub(crate) fn norm_forward(
    x: &[f64],
    channels: usize,
    plane: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv = vec![0.0; channels];
    for c in 0..channels {
        let xs = &x[c * plane..(c + 1) * plane];
        let mean = xs.iter().sum::<f64>() / plane as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv[c] = is;
        for p in 0..plane {
            let h = (xs[p] - mean) * is;
            xhat[c * plane + p] = h;
            y[c * plane + p] = gamma[c] * h + beta[c];
        }
    }
    (y, xhat, inv)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    channels: usize,
    plane: usize,
    gamma: &[f64],
    gy: &[f64],
    gx: &mut [f64],
    ggamma: &mut [f64],
    gbeta: &mut [f64],
) {
    let n = plane as f64;
    for c in 0..channels {
        let h = &xhat[c * plane..(c + 1) * plane];
        let g = &gy[c * plane..(c + 1) * plane];
        let sum_g: f64 = g.iter().sum();
        let sum_gh: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
        ggamma[c] += sum_gh;
        gbeta[c] += sum_g;
        let s = gamma[c] * inv_std[c] / n;
        for p in 0..plane {
            gx[c * plane + p] += s * (n * g[p] - sum_g - h[p] * sum_gh);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &[f64], ci: usize, m: usize, n: usize, w: &[f64], co: usize, k: usize) -> Vec<f64> {
        let r = (k / 2) as isize;
        let mut out = vec![0.0; co * m * n];
        for o in 0..co {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for dy in 0..k {
                            for dx in 0..k {
                                let (si, sj) = (i as isize + dy as isize - r, j as isize + dx as isize - r);
                                if si >= 0 && sj >= 0 && (si as usize) < m && (sj as usize) < n {
                                    acc += w[((o * ci + c) * k + dy) * k + dx]
                                        * x[(c * m + si as usize) * n + sj as usize];
                                }
                            }
                        }
                    }
                    out[(o * m + i) * n + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (ci, co, m, n) = (2, 3, 4, 5);
        let x: Vec<f64> = (0..ci * m * n).map(|v| (v as f64 * 0.37).sin()).collect();
        for k in [1, 3] {
            let w: Vec<f64> = (0..co * ci * k * k).map(|v| (v as f64 * 0.91).cos()).collect();
            let y = conv_forward(&x, ci, m, n, &w, &[0.0; 3], co, k);
            let d = direct_conv(&x, ci, m, n, &w, co, k);
            assert!(y.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let (ci, co, m, n, k) = (2, 3, 4, 5, 3);
        let x: Vec<f64> = (0..ci * m * n).map(|v| (v as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..ci * m * n).map(|v| (v as f64 * 0.11).cos()).collect();
        let w: Vec<f64> = (0..co * ci * k * k).map(|v| (v as f64 * 0.91).cos()).collect();
        let gy: Vec<f64> = (0..co * m * n).map(|v| (v as f64 * 0.53).sin()).collect();
        let (mut gx, mut gw, mut gb) = (vec![0.0; x.len()], vec![0.0; w.len()], vec![0.0; co]);
        conv_backward(&x, ci, m, n, &w, co, k, &gy, &mut gx, &mut gw, &mut gb);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let yv = conv_forward(&v, ci, m, n, &w, &[0.0; 3], co, k);
        assert!((dot(&gy, &yv) - dot(&gx, &v)).abs() < 1e-10);
        let dw: Vec<f64> = (0..w.len()).map(|v| (v as f64 * 0.29).sin()).collect();
        let yw = conv_forward(&x, ci, m, n, &dw, &[0.0; 3], co, k);
        assert!((dot(&gy, &yw) - dot(&gw, &dw)).abs() < 1e-10);
        assert!((gb.iter().sum::<f64>() - gy.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
