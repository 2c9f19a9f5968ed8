//! Object segmentation guided by four extreme-point clicks.
//!
//! The pipeline turns the left-most, right-most, top and bottom pixels of an
//! object into a crop of the image plus a heatmap guidance channel, runs a
//! small fully-convolutional network over it and projects the probability map
//! back into the image frame. A fifth boundary click refines poor results.
//!
//! Modules, bottom-up:
//!
//! * [`raster`]: 8-bit images and binary masks, PGM/PPM I/O, RLE, resampling.
//! * [`geometry`]: extreme points, boxes, crop-and-relax.
//! * [`encoding`]: network input assembly (RGB plus guidance channel).
//! * [`autonet`]: tensors with reverse-mode gradients, the segmenter, SGD.
//! * [`objective`]: class-balanced cross-entropy and evaluation metrics.
//! * [`trainer`]: training, prediction, hard examples, the interactive study.
//! * [`harness`]: synthetic data, ablations, clicks-to-quality, budgets.
//! * [`service`]: HTTP JSON API for interactive annotation.

pub mod autonet;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod objective;
pub mod raster;
pub mod regions;
pub mod service;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
