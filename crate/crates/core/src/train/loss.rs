use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;
use crate::tensor::RealArray;

/// `||pred - target||^2 / ||target||^2` for one sample.
pub fn nmse_sample(pred: &ComplexGrid2D, target: &ComplexGrid2D, sample: usize) -> Result<f64> {
    target.ensure_shape(pred.rows(), pred.cols(), "target")?;
    let denom = target.norm_sqr();
    if !(denom > 0.0) {
        return Err(Error::ZeroTargetNorm { sample });
    }
    let num: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).norm_sqr())
        .sum();
    Ok(num / denom)
}

/// Batch mean of per-sample normalized squared errors.
pub fn nmse_loss(preds: &[ComplexGrid2D], targets: &[ComplexGrid2D]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for (k, (p, t)) in preds.iter().zip(targets).enumerate() {
        sum += nmse_sample(p, t, k)?;
    }
    Ok(sum / preds.len() as f64)
}

/// Sample N-MSE and its gradient with respect to the `[2, M, N]` real
/// prediction tensor, scaled by `weight`.
pub(crate) fn nmse_with_grad(
    pred: &RealArray,
    target: &ComplexGrid2D,
    weight: f64,
    sample: usize,
) -> Result<(f64, RealArray)> {
    let (m, n) = target.shape();
    pred.ensure_shape(&[2, m, n], "prediction")?;
    let denom = target.norm_sqr();
    if !(denom > 0.0) {
        return Err(Error::ZeroTargetNorm { sample });
    }
    let (re, im) = pred.data().split_at(m * n);
    let mut grad = vec![0.0; 2 * m * n];
    let mut num = 0.0;
    let s = 2.0 * weight / denom;
    for (k, t) in target.data().iter().enumerate() {
        let (dr, di) = (re[k] - t.re, im[k] - t.im);
        num += dr * dr + di * di;
        grad[k] = s * dr;
        grad[m * n + k] = s * di;
    }
    Ok((num / denom, RealArray::from_vec(&[2, m, n], grad)?))
}

/// Diagnostic `sum |Re d| + |Im d|`; not rotation invariant.
pub fn l1_complex_distance(z1: &ComplexGrid2D, z2: &ComplexGrid2D) -> Result<f64> {
    z2.ensure_shape(z1.rows(), z1.cols(), "second operand")?;
    Ok(z1
        .data()
        .iter()
        .zip(z2.data())
        .map(|(a, b)| (a.re - b.re).abs() + (a.im - b.im).abs())
        .sum())
}

/// `sqrt(sum |d|^2)`.
pub fn l2_complex_distance(z1: &ComplexGrid2D, z2: &ComplexGrid2D) -> Result<f64> {
    z2.ensure_shape(z1.rows(), z1.cols(), "second operand")?;
    Ok(z1
        .data()
        .iter()
        .zip(z2.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// Multiplies a field by `e^{j phi}`.
pub fn rotate(z: &ComplexGrid2D, phi: f64) -> ComplexGrid2D {
    z.scale(Complex64::from_polar(1.0, phi))
}
