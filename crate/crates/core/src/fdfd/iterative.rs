use num_complex::Complex64;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    // unconjugated bilinear form; BiCGSTAB only needs consistency
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned BiCGSTAB. Returns the solution and the number of
/// iterations used; stops when `||b - A x|| <= tol * ||b||`.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[Complex64],
    tol: f64,
    max_iterations: usize,
) -> Result<(Vec<Complex64>, usize)> {
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((vec![zero; n], 0));
    }
    let inv_diag: Vec<Complex64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d == zero { Complex64::new(1.0, 0.0) } else { 1.0 / d })
        .collect();
    let precond = |v: &[Complex64]| -> Vec<Complex64> {
        v.iter().zip(&inv_diag).map(|(x, d)| x * d).collect()
    };

    let mut x = vec![zero; n];
    let mut r = b.to_vec();
    let r_hat: Vec<Complex64> = r.iter().map(|z| z.conj()).collect();
    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut v = vec![zero; n];
    let mut p = vec![zero; n];
    let mut res = 1.0;
    for it in 1..=max_iterations {
        let rho_new = dot(&r_hat, &r);
        if rho_new.norm() == 0.0 || omega.norm() == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        let y = precond(&p);
        v = a.mul_vec(&y);
        let denom = dot(&r_hat, &v);
        if denom.norm() == 0.0 {
            break;
        }
        alpha = rho / denom;
        let s: Vec<Complex64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm(&s) / b_norm <= tol {
            for k in 0..n {
                x[k] += alpha * y[k];
            }
            return Ok((x, it));
        }
        let z = precond(&s);
        let t = a.mul_vec(&z);
        let tt: f64 = t.iter().map(|c| c.norm_sqr()).sum();
        omega = if tt == 0.0 {
            zero
        } else {
            t.iter().zip(&s).map(|(ti, si)| ti.conj() * si).sum::<Complex64>() / tt
        };
        for k in 0..n {
            x[k] += alpha * y[k] + omega * z[k];
            r[k] = s[k] - omega * t[k];
        }
        res = norm(&r) / b_norm;
        if res <= tol {
            return Ok((x, it));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iterations,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_diagonally_dominant_system() {
        let n = 50;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, Complex64::new(4.0, 1.0))];
                if i > 0 {
                    r.push((i - 1, Complex64::new(-1.0, 0.2)));
                }
                if i + 1 < n {
                    r.push((i + 1, Complex64::new(-1.0, -0.3)));
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(n, rows);
        let b: Vec<Complex64> = (0..n).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let (x, _) = bicgstab(&a, &b, 1e-12, 500).unwrap();
        let r = a.mul_vec(&x);
        let err = r.iter().zip(&b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm(&b) < 1e-11);
    }

    #[test]
    fn reports_non_convergence() {
        let n = 30;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, Complex64::new(0.01, 0.0))];
                if i > 0 {
                    r.push((i - 1, Complex64::new(1.0, 0.0)));
                }
                if i + 1 < n {
                    r.push((i + 1, Complex64::new(1.0, 0.0)));
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(n, rows);
        let b = vec![Complex64::new(1.0, 0.0); n];
        assert!(matches!(
            bicgstab(&a, &b, 1e-14, 2),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
    }
}
