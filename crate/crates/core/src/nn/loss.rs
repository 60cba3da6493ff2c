//! Negative Pearson correlation coefficient.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::{Error, Result};

struct Centered {
    est: Vec<f64>,
    truth: Vec<f64>,
    est_norm: f64,
    truth_norm: f64,
}

fn center(est: &[f64], truth: &[f64]) -> Result<Centered> {
    if est.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            context: "npcc",
            expected: alloc::vec![truth.len()],
            found: alloc::vec![est.len()],
        });
    }
    if est.is_empty() {
        return Err(Error::Empty("npcc of empty images"));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let est: Vec<f64> = est.iter().map(|v| v - me).collect();
    let truth: Vec<f64> = truth.iter().map(|v| v - mt).collect();
    let est_norm = est.iter().map(|v| v * v).sum::<f64>().sqrt();
    let truth_norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(est_norm > 0.0) {
        return Err(Error::Degenerate(
            "estimate is constant (zero centered norm)",
        ));
    }
    if !(truth_norm > 0.0) {
        return Err(Error::Degenerate(
            "ground truth is constant (zero centered norm)",
        ));
    }
    Ok(Centered {
        est,
        truth,
        est_norm,
        truth_norm,
    })
}

/// `-sum(est_c * truth_c) / (|est_c| |truth_c|)` with `_c` the mean-removed
/// images. Lies in `[-1, 1]`; `-1` for any positive-affine image of the truth.
pub fn npcc(est: &[f64], truth: &[f64]) -> Result<f64> {
    let c = center(est, truth)?;
    let cross: f64 = c.est.iter().zip(&c.truth).map(|(a, b)| a * b).sum();
    Ok((-cross / (c.est_norm * c.truth_norm)).clamp(-1.0, 1.0))
}

/// NPCC and its gradient with respect to `est`.
pub fn npcc_with_grad(est: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    let c = center(est, truth)?;
    let cross: f64 = c.est.iter().zip(&c.truth).map(|(a, b)| a * b).sum();
    let denom = c.est_norm * c.truth_norm;
    let r = cross / denom;
    // d r / d est = truth_c / denom - r est_c / |est_c|^2; the centering
    // Jacobian drops out because both vectors are already zero-mean.
    let inv_e2 = 1.0 / (c.est_norm * c.est_norm);
    let grad = c
        .est
        .iter()
        .zip(&c.truth)
        .map(|(e, t)| -(t / denom - r * e * inv_e2))
        .collect();
    Ok((-r, grad))
}

/// Mean per-sample NPCC over a `[batch, ...]` tensor pair, with the gradient
/// with respect to `est`.
pub fn npcc_batch(est: &Tensor, truth: &Tensor) -> Result<(f64, Tensor)> {
    if est.shape() != truth.shape() || est.shape().is_empty() {
        return Err(Error::ShapeMismatch {
            context: "npcc batch",
            expected: truth.shape().to_vec(),
            found: est.shape().to_vec(),
        });
    }
    let batch = est.shape()[0];
    let per = est.numel() / batch;
    let mut grad = Vec::with_capacity(est.numel());
    let mut total = 0.0;
    for (e, t) in est
        .data()
        .chunks_exact(per)
        .zip(truth.data().chunks_exact(per))
    {
        let (loss, g) = npcc_with_grad(e, t)?;
        total += loss;
        grad.extend(g.into_iter().map(|v| v / batch as f64));
    }
    Ok((total / batch as f64, Tensor::from_vec(est.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ramp() -> Vec<f64> {
        (0..50)
            .map(|i| ((i * 37) % 17) as f64 * 0.1 + (i as f64 * 0.2).sin())
            .collect()
    }

    #[test]
    fn reference_values() {
        let f = ramp();
        assert!((npcc(&f, &f).unwrap() + 1.0).abs() < 1e-12);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert!((npcc(&neg, &f).unwrap() - 1.0).abs() < 1e-12);
        let affine: Vec<f64> = f.iter().map(|v| 3.5 * v - 2.0).collect();
        assert!((npcc(&affine, &f).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_inputs_are_degenerate() {
        let f = ramp();
        assert!(matches!(
            npcc(&vec![2.0; 50], &f),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            npcc(&f, &vec![0.0; 50]),
            Err(Error::Degenerate(_))
        ));
        assert!(npcc(&f[..10], &f).is_err());
    }

    #[test]
    fn stationary_at_perfect_reconstruction() {
        let f = ramp();
        let (_, g) = npcc_with_grad(&f, &f).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = ramp();
        let e: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, v)| v + (i as f64 * 1.7).cos())
            .collect();
        let (_, g) = npcc_with_grad(&e, &t).unwrap();
        let h = 1e-6;
        for i in 0..e.len() {
            let mut p = e.clone();
            p[i] += h;
            let mut m = e.clone();
            m[i] -= h;
            let fd = (npcc(&p, &t).unwrap() - npcc(&m, &t).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "i={i}: {fd} vs {}", g[i]);
        }
    }
}
