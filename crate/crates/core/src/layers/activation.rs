use crate::error::{Error, Result};
use crate::layers::Matrix;
use crate::real::Real;

pub fn relu_forward<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given the forward *input*; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
    if x.rows() != grad_out.rows() || x.cols() != grad_out.cols() {
        return Err(Error::shape(
            "relu_backward",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", grad_out.rows(), grad_out.cols()),
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}
