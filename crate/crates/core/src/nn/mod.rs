//! Minimal reverse-mode autodiff over C×H×W tensors.
//!
//! Enough operators to express small convolutional encoders and U-shaped
//! decoders: same-padded convolution, ReLU, 2×2 max-pooling, nearest 2×
//! upsampling, channel concatenation, global average pooling and a dense layer.
//! A [`Graph`] records one forward pass for one sample; [`Graph::backward`]
//! accumulates parameter gradients into a [`ParamGrads`] buffer so a batch is
//! processed sample by sample.

mod graph;
mod optim;
mod params;

pub use graph::{Graph, Var};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamGrads, ParamStore};
