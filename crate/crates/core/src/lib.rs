//! Multi-axis external-weights segmentation stack.
//!
//! Everything is built on a small dense `f64` tensor core: real-input 2D DFTs
//! along any axis pair of a `[C,H,W]` feature map, learned spectral gating
//! weights produced by a bilinear-interpolation + inverted-residual generator,
//! a U-shape encoder/decoder assembled from those blocks, hand-written
//! reverse-mode gradients for every op, and segmentation metrics.

pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mew;
pub mod model;
pub mod nn;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{ComplexTensor, Tensor};
