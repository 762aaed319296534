use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{Matrix, Parameterized};
use crate::real::Real;

/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization over all rows of the input.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<f64>,
    train: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Normalizes with batch statistics when `train` (updating the running
    /// averages), otherwise with the running statistics.
    pub fn forward(&mut self, x: &Matrix<T>, train: bool) -> Result<(Matrix<T>, BatchNormCache<T>)> {
        if x.cols() != self.channels {
            return Err(Error::shape("batchnorm channels", self.channels, x.cols()));
        }
        if train && x.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        let c = self.channels;
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            let n = x.rows() as f64;
            let stats: Vec<(f64, f64)> = (0..c)
                .into_par_iter()
                .map(|j| {
                    let mut s = 0.0;
                    for r in 0..x.rows() {
                        s += x.get(r, j).f64();
                    }
                    let m = s / n;
                    let mut v = 0.0;
                    for r in 0..x.rows() {
                        let d = x.get(r, j).f64() - m;
                        v += d * d;
                    }
                    (m, v / n)
                })
                .collect();
            for (j, &(m, v)) in stats.iter().enumerate() {
                self.running_mean[j] =
                    T::of(BN_MOMENTUM * self.running_mean[j].f64() + (1.0 - BN_MOMENTUM) * m);
                self.running_var[j] =
                    T::of(BN_MOMENTUM * self.running_var[j].f64() + (1.0 - BN_MOMENTUM) * v);
            }
            stats.into_iter().unzip()
        } else {
            (
                self.running_mean.iter().map(|v| v.f64()).collect(),
                self.running_var.iter().map(|v| v.f64()).collect(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut xhat = Matrix::zeros(x.rows(), c);
        let mut y = Matrix::zeros(x.rows(), c);
        xhat.data_mut()
            .par_chunks_mut(c.max(1))
            .zip(y.data_mut().par_chunks_mut(c.max(1)))
            .enumerate()
            .for_each(|(r, (h, o))| {
                for j in 0..c {
                    let v = (x.get(r, j).f64() - mean[j]) * inv_std[j];
                    h[j] = T::of(v);
                    o[j] = T::of(self.gamma[j].f64() * v + self.beta[j].f64());
                }
            });
        Ok((y, BatchNormCache { xhat, inv_std, train }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        let xhat = &cache.xhat;
        if grad_out.rows() != xhat.rows() || grad_out.cols() != self.channels {
            return Err(Error::shape(
                "batchnorm backward",
                format!("{}x{}", xhat.rows(), self.channels),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        let c = self.channels;
        let rows = xhat.rows();
        let n = rows as f64;
        let sums: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|j| {
                let mut sg = 0.0;
                let mut sgx = 0.0;
                for r in 0..rows {
                    let g = grad_out.get(r, j).f64();
                    sg += g;
                    sgx += g * xhat.get(r, j).f64();
                }
                (sg, sgx)
            })
            .collect();
        for (j, &(sg, sgx)) in sums.iter().enumerate() {
            self.grad_beta[j] += T::of(sg);
            self.grad_gamma[j] += T::of(sgx);
        }
        let mut grad_in = Matrix::zeros(rows, c);
        grad_in
            .data_mut()
            .par_chunks_mut(c.max(1))
            .enumerate()
            .for_each(|(r, gi)| {
                for j in 0..c {
                    let scale = self.gamma[j].f64() * cache.inv_std[j];
                    let g = grad_out.get(r, j).f64();
                    gi[j] = if cache.train {
                        let (sg, sgx) = sums[j];
                        T::of(scale * (g - sg / n - xhat.get(r, j).f64() * sgx / n))
                    } else {
                        T::of(scale * g)
                    };
                }
            });
        Ok(grad_in)
    }
}

impl<T: Real> Parameterized<T> for BatchNorm<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f("gamma", &mut self.gamma, &mut self.grad_gamma);
        f("beta", &mut self.beta, &mut self.grad_beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }
}
