//! Largest singular value by power iteration.

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Estimates `‖W‖₂` by power iteration on `WᵀW`.
///
/// Stops once the relative change of the estimate drops below `tol` or
/// after `iters` rounds. The start vector is fixed, so the result is a pure
/// function of `W`.
pub fn spectral_norm(w: &Tensor, iters: usize, tol: f64) -> Result<f64> {
    if w.shape().len() != 2 {
        return Err(Error::Shape(format!("spectral norm of {:?}", w.shape())));
    }
    if w.is_empty() {
        return Err(Error::Shape("spectral norm of an empty matrix".into()));
    }
    if iters == 0 {
        return Err(Error::Config("power iteration needs at least one round".into()));
    }
    let (r, c) = (w.rows(), w.cols());
    // irregular start so it is not orthogonal to the top singular vector
    // for structured inputs
    let mut v: Vec<f64> = (0..c).map(|i| 1.0 + 0.37 * ((i * 7 + 3) % 11) as f64).collect();
    normalize(&mut v);
    let mut u = vec![0.0; r];
    let mut sigma = 0.0;
    for _ in 0..iters {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = w.row_slice(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm_u = norm(&u);
        if norm_u == 0.0 {
            return Ok(0.0);
        }
        let next = norm_u;
        let mut nv = vec![0.0; c];
        for (i, &ui) in u.iter().enumerate() {
            for (o, a) in nv.iter_mut().zip(w.row_slice(i)) {
                *o += a * ui;
            }
        }
        if norm(&nv) == 0.0 {
            return Ok(next);
        }
        normalize(&mut nv);
        v = nv;
        let converged = (next - sigma).abs() <= tol * next;
        sigma = next;
        if converged {
            break;
        }
    }
    // final estimate with the last direction
    for (i, ui) in u.iter_mut().enumerate() {
        *ui = w.row_slice(i).iter().zip(&v).map(|(a, b)| a * b).sum();
    }
    Ok(norm(&u).max(sigma))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = norm(x);
    for v in x.iter_mut() {
        *v /= n;
    }
}
