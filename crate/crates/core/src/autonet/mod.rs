//! Tensor math with reverse-mode gradients, the segmenter network, SGD and
//! checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod model;
mod ops;
pub mod sgd;

pub use gradcheck::{grad_check, linear_probe, GradCheckReport};
pub use layer::{Conv2d, Gradients, Layer, LayerKind, LayerSpec, Network, PyramidPool, Tape};
pub use model::{init_weights, SegmenterConfig, SegmenterModel};
pub use sgd::{sgd_step, Sgd, SgdConfig};
