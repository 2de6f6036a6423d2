//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` layout: column `j` of the factor holds
//! rows `j - kl - ku ..= j + kl` at offsets `kv + i - j` with `kv = kl + ku`,
//! leaving `kl` extra superdiagonals for pivoting fill-in.

use num_complex::Complex64;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Pivots below this fraction of the largest matrix entry are treated as zero.
const PIVOT_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
    ipiv: Vec<usize>,
    /// `perm[new] = old` unknown ordering used inside the factor.
    perm: Vec<usize>,
}

impl BandedLu {
    /// Factor `a` under the unknown ordering `perm` (`perm[new] = old`).
    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.n_rows();
        assert_eq!(n, a.n_cols(), "banded LU needs a square matrix");
        assert_eq!(perm.len(), n);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (kl, ku) = bandwidths(a, &inv);
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![Complex64::new(0.0, 0.0); ldab * n];
        for old_i in 0..n {
            let i = inv[old_i];
            for (old_j, v) in a.row(old_i) {
                let j = inv[old_j];
                ab[j * ldab + kv + i - j] += v;
            }
        }
        let scale = a.max_abs();
        let mut lu = Self {
            n,
            kl,
            ku,
            ldab,
            ab,
            ipiv: vec![0; n],
            perm,
        };
        lu.factorize(scale)?;
        Ok(lu)
    }

    /// Factor `a`, picking whichever of the natural or grid-transposed
    /// ordering gives the narrower band. `grid` is `(rows, cols)` of the
    /// row-major unknown layout, or `None` for the natural ordering only.
    pub fn factor(a: &CsrMatrix, grid: Option<(usize, usize)>) -> Result<Self> {
        let n = a.n_rows();
        let natural: Vec<usize> = (0..n).collect();
        let Some((rows, cols)) = grid else {
            return Self::factor_with_ordering(a, natural);
        };
        assert_eq!(rows * cols, n);
        // new index j*rows + i  <-  old index i*cols + j
        let mut transposed = vec![0usize; n];
        for i in 0..rows {
            for j in 0..cols {
                transposed[j * rows + i] = i * cols + j;
            }
        }
        let width = |perm: &[usize]| {
            let mut inv = vec![0usize; n];
            for (new, &old) in perm.iter().enumerate() {
                inv[old] = new;
            }
            let (kl, ku) = bandwidths(a, &inv);
            2 * kl + ku
        };
        if width(&transposed) < width(&natural) {
            Self::factor_with_ordering(a, transposed)
        } else {
            Self::factor_with_ordering(a, natural)
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn factorize(&mut self, scale: f64) -> Result<()> {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let threshold = PIVOT_TOLERANCE * scale;
        let ab = &mut self.ab;
        let idx = |r: usize, c: usize| c * ldab + kv + r - c;
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = -1.0;
            for r in 0..=km {
                let v = ab[j * ldab + kv + r].norm();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            self.ipiv[j] = j + jp;
            if !(best > threshold) {
                return Err(Error::SingularSystem { column: j });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    ab.swap(idx(j, c), idx(j + jp, c));
                }
            }
            if km > 0 {
                let inv_pivot = 1.0 / ab[j * ldab + kv];
                for r in 1..=km {
                    ab[j * ldab + kv + r] *= inv_pivot;
                }
                for c in (j + 1)..=ju {
                    let u = ab[idx(j, c)];
                    if u == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let (left, right) = ab.split_at_mut(c * ldab);
                    let lcol = &left[j * ldab + kv + 1..j * ldab + kv + 1 + km];
                    let base = kv + j + 1 - c;
                    let ucol = &mut right[base..base + km];
                    for (dst, &l) in ucol.iter_mut().zip(lcol) {
                        *dst -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solve `A x = b` with `b` given in the original unknown ordering.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = self.kl + self.ku;
        assert_eq!(b.len(), n);
        let mut x: Vec<Complex64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let xj = x[j];
            if xj != Complex64::new(0.0, 0.0) {
                for r in 1..=km {
                    x[j + r] -= self.ab[j * ldab + kv + r] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            x[j] /= self.ab[j * ldab + kv];
            let xj = x[j];
            let top = j.saturating_sub(kv);
            for i in top..j {
                x[i] -= self.ab[j * ldab + kv + i - j] * xj;
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

fn bandwidths(a: &CsrMatrix, inv: &[usize]) -> (usize, usize) {
    let mut kl = 0;
    let mut ku = 0;
    for old_i in 0..a.n_rows() {
        let i = inv[old_i];
        for (old_j, _) in a.row(old_i) {
            let j = inv[old_j];
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
    }
    (kl, ku)
}
