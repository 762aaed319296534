use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{he_normal, Matrix, Parameterized};
use crate::real::Real;

/// Row-wise affine map `y = W x + b`, used both point-wise (the MLP stage) and
/// for the fully-connected head.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: he_normal(in_dim * out_dim, in_dim, rng),
            bias: vec![T::zero(); out_dim],
            grad_weight: vec![T::zero(); in_dim * out_dim],
            grad_bias: vec![T::zero(); out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.in_dim {
            return Err(Error::shape("linear input channels", self.in_dim, x.cols()));
        }
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        let (ind, outd) = (self.in_dim, self.out_dim);
        out.data_mut()
            .par_chunks_mut(outd.max(1))
            .enumerate()
            .for_each(|(r, y)| {
                let xr = x.row(r);
                for (o, yo) in y.iter_mut().enumerate() {
                    let w = &self.weight[o * ind..(o + 1) * ind];
                    let mut acc = self.bias[o].f64();
                    for (&wi, &xi) in w.iter().zip(xr) {
                        acc += wi.f64() * xi.f64();
                    }
                    *yo = T::of(acc);
                }
            });
        Ok(out)
    }

    /// Accumulates `dW += g^T x`, `db += sum_rows g` and returns `g W`.
    pub fn backward(&mut self, x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.in_dim || grad_out.cols() != self.out_dim || x.rows() != grad_out.rows() {
            return Err(Error::shape(
                "linear backward",
                format!("{}x{} / {}x{}", x.rows(), self.in_dim, x.rows(), self.out_dim),
                format!("{}x{} / {}x{}", x.rows(), x.cols(), grad_out.rows(), grad_out.cols()),
            ));
        }
        let ind = self.in_dim;
        let rows = x.rows();
        // Each output channel owns one weight row, so the reduction is race-free
        // and its summation order fixed.
        self.grad_weight
            .par_chunks_mut(ind.max(1))
            .zip(self.grad_bias.par_iter_mut())
            .enumerate()
            .for_each(|(o, (gw, gb))| {
                let mut acc = vec![0.0f64; ind];
                let mut acc_b = 0.0f64;
                for r in 0..rows {
                    let g = grad_out.get(r, o).f64();
                    if g == 0.0 {
                        continue;
                    }
                    acc_b += g;
                    for (a, &xi) in acc.iter_mut().zip(x.row(r)) {
                        *a += g * xi.f64();
                    }
                }
                for (w, a) in gw.iter_mut().zip(acc) {
                    *w += T::of(a);
                }
                *gb += T::of(acc_b);
            });

        let mut grad_in = Matrix::zeros(rows, ind);
        let outd = self.out_dim;
        grad_in
            .data_mut()
            .par_chunks_mut(ind.max(1))
            .enumerate()
            .for_each(|(r, gi)| {
                let g = grad_out.row(r);
                let mut acc = vec![0.0f64; ind];
                for (o, &go) in g.iter().enumerate().take(outd) {
                    let go = go.f64();
                    if go == 0.0 {
                        continue;
                    }
                    for (a, &w) in acc.iter_mut().zip(&self.weight[o * ind..(o + 1) * ind]) {
                        *a += go * w.f64();
                    }
                }
                for (d, a) in gi.iter_mut().zip(acc) {
                    *d = T::of(a);
                }
            });
        Ok(grad_in)
    }
}

impl<T: Real> Parameterized<T> for Linear<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f("weight", &mut self.weight, &mut self.grad_weight);
        f("bias", &mut self.bias, &mut self.grad_bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::<f64>::new(2, 1, &mut rng);
        l.weight = vec![2.0, -1.0];
        l.bias = vec![0.5];
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(l.forward(&x).unwrap().data(), &[1.5, -2.5]);
        let g = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let gi = l.backward(&x, &g).unwrap();
        assert_eq!(gi.data(), &[2.0, -1.0, 4.0, -2.0]);
        assert_eq!(l.grad_weight, vec![1.0, 7.0]);
        assert_eq!(l.grad_bias, vec![3.0]);
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::<f32>::new(3, 2, &mut rng);
        assert!(l.forward(&Matrix::zeros(1, 2)).is_err());
    }
}
