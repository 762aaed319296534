use crate::error::{Error, Result};
use crate::layers::Matrix;
use crate::real::Real;

/// Mean softmax cross-entropy over rows of `logits`, and its gradient with
/// respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Matrix<T>, targets: &[usize]) -> Result<(f64, Matrix<T>)> {
    if logits.rows() != targets.len() {
        return Err(Error::shape("cross-entropy targets", logits.rows(), targets.len()));
    }
    if logits.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let c = logits.cols();
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::shape("cross-entropy class", format!("< {c}"), t));
    }
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), c);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - row[t].f64();
        for (j, e) in exps.iter().enumerate() {
            let p = e / z;
            let y = if j == t { 1.0 } else { 0.0 };
            grad.set(r, j, T::of((p - y) / n));
        }
    }
    Ok((loss / n, grad))
}
