//! Differentiable building blocks with explicit forward/backward passes.
//!
//! Every layer is stateless with respect to activations: `forward` returns the
//! output together with whatever the backward pass needs, and `backward`
//! accumulates parameter gradients into the layer's own buffers.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod matrix;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPSILON, BN_MOMENTUM};
pub use conv::{ConvPlan, SphericalConv};
pub use linear::Linear;
pub use loss::softmax_cross_entropy;
pub use matrix::Matrix;
pub use pool::{maxpool_backward, maxpool_segments, MaxPool};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;

/// The shared point-wise "MLP" stage is a [`Linear`] applied to every point.
pub type PointwiseLinear<T> = Linear<T>;

/// Visitor over trainable parameters and their gradient buffers.
pub trait Parameterized<T: Real> {
    /// Calls `f(name, values, grads)` for every parameter tensor in a fixed order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T]));

    /// Calls `f(name, values)` for non-trainable state (running statistics).
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut [T])) {}

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, _, g| g.iter_mut().for_each(|v| *v = T::zero()));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, v, _| n += v.len());
        n
    }
}

/// He initialization: zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
pub(crate) fn he_normal<T: Real, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..len).map(|_| T::of(normal.sample(rng))).collect()
}
