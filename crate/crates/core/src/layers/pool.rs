use crate::error::{Error, Result};
use crate::layers::Matrix;
use crate::real::Real;

/// Channel-wise max over a block of rows, with the winning row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool<T> {
    pub values: Vec<T>,
    /// Row (relative to the pooled block) that supplied each channel's maximum.
    /// Ties go to the first row.
    pub argmax: Vec<usize>,
}

impl<T: Real> MaxPool<T> {
    pub fn over_rows(x: &Matrix<T>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        let mut values = x.row(0).to_vec();
        let mut argmax = vec![0; x.cols()];
        for r in 1..x.rows() {
            for (j, &v) in x.row(r).iter().enumerate() {
                if v > values[j] {
                    values[j] = v;
                    argmax[j] = r;
                }
            }
        }
        Ok(MaxPool { values, argmax })
    }
}

/// Max-pools each row segment `offsets[b]..offsets[b + 1]` into output row `b`.
/// Returns the pooled matrix and the absolute argmax row per (segment, channel).
pub fn maxpool_segments<T: Real>(x: &Matrix<T>, offsets: &[usize]) -> Result<(Matrix<T>, Vec<usize>)> {
    let segments = offsets.len().saturating_sub(1);
    if offsets.last().copied().unwrap_or(0) != x.rows() {
        return Err(Error::shape("maxpool segments", x.rows(), offsets.last().copied().unwrap_or(0)));
    }
    let c = x.cols();
    let mut out = Matrix::zeros(segments, c);
    let mut argmax = vec![0; segments * c];
    for b in 0..segments {
        let (lo, hi) = (offsets[b], offsets[b + 1]);
        if lo >= hi {
            return Err(Error::EmptyInput);
        }
        let pool = MaxPool::over_rows(&x.slice_rows(lo, hi))?;
        out.row_mut(b).copy_from_slice(&pool.values);
        for (j, a) in pool.argmax.into_iter().enumerate() {
            argmax[b * c + j] = lo + a;
        }
    }
    Ok((out, argmax))
}

/// Routes each pooled gradient back to its argmax row.
pub fn maxpool_backward<T: Real>(grad_out: &Matrix<T>, argmax: &[usize], input_rows: usize) -> Result<Matrix<T>> {
    let c = grad_out.cols();
    if argmax.len() != grad_out.rows() * c {
        return Err(Error::shape("maxpool backward", argmax.len(), grad_out.rows() * c));
    }
    let mut grad_in = Matrix::zeros(input_rows, c);
    for b in 0..grad_out.rows() {
        for j in 0..c {
            let r = argmax[b * c + j];
            let v = grad_in.get(r, j) + grad_out.get(b, j);
            grad_in.set(r, j, v);
        }
    }
    Ok(grad_in)
}
