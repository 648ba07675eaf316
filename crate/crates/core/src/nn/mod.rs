//! Layer primitives with explicit forward and backward passes.
//!
//! Layers are plain state records. Forward/backward take the layer input
//! explicitly instead of caching it, so every backward is a pure function
//! of `(state, input, upstream)`.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use batchnorm::{BatchNormGrads, BatchNormLayer, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{ConvGrads, ConvLayer};
pub use dropout::DropoutLayer;
pub use linear::{LinearGrads, LinearLayer};
pub use loss::{softmax, softmax_cross_entropy, LossResult};
pub use pool::{maxpool_backward, maxpool_forward, PoolOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
