//! CPU engine for the AD-Lite Net architecture: a lightweight two-branch
//! CNN with five standard convolution blocks, two depthwise-separable
//! blocks, and a parallel concatenation branch that taps the third block
//! through a negative-image transformation layer.
//!
//! The crate covers the full desk-scale workflow: dense tensors and layers
//! with exact reverse-mode gradients, graph assembly with closed-form
//! parameter and shape audits, Adam training with the decaying learning-rate
//! schedule, dataset ingestion/splitting plus a synthetic generator, and
//! confusion-matrix metrics.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
mod linalg;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::{Dtype, Scalar};
pub use tensor::{concat_channels, Tensor};
