use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.max_scalar(T::zero())
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward<T: Real>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_with(upstream, |x, g| if x > T::zero() { g } else { T::zero() })
}
