//! Forward and reverse-mode implementations of every layer in the network:
//! standard and depthwise-separable convolutions, 2x2 max pooling, batch
//! normalization, the negative-image transformation layer, the dense output
//! layer, and the softmax cross-entropy head.
//!
//! Every `forward` returns the output plus a cache holding exactly what the
//! matching `backward` needs; `backward` returns gradients of a scalar loss
//! with respect to inputs and parameters.

mod batchnorm;
mod conv;
mod dense;
mod dwsc;
mod pool;
mod softmax;
mod tx;

pub use batchnorm::{BatchNorm, BnCache, BnGrads};
pub use conv::{Conv2D, ConvCache, ConvGrads};
pub use dense::{Dense, DenseCache, DenseGrads};
pub use dwsc::{Dwsc, DwscCache, DwscGrads};
pub use pool::{maxpool_backward, maxpool_forward, MaxPoolCache};
pub use softmax::{softmax_cce, softmax_probs, LossOutput};
pub use tx::TxLayer;

/// Activation fused into a convolution or dense forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Batch-statistics mode for layers that behave differently in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
