use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::real::Real;

/// Heavy-ball update: `v = momentum * v + grad`, `param -= lr * v`.
pub fn sgd_step<T: Real>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: f64, momentum: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("sgd gradient", params.len(), grads.len()));
    }
    if velocity.len() != params.len() {
        return Err(Error::shape("sgd velocity", params.len(), velocity.len()));
    }
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over every parameter tensor of a model, in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<T>>) {
        self.velocity = velocity;
    }

    pub fn step<M: Parameterized<T> + ?Sized>(&mut self, model: &mut M, lr: f64) -> Result<()> {
        let mut k = 0;
        let mut result = Ok(());
        let momentum = self.momentum;
        let velocity = &mut self.velocity;
        model.visit_params(&mut |_, p, g| {
            if result.is_err() {
                return;
            }
            if velocity.len() == k {
                velocity.push(vec![T::zero(); p.len()]);
            }
            result = sgd_step(p, g, &mut velocity[k], lr, momentum);
            k += 1;
        });
        result
    }
}
