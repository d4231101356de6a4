//! Multi-task convolutional network for dermoscopic skin-lesion analysis.
//!
//! One shared encoder feeds a U-Net style segmentation decoder and two sigmoid
//! classification heads (melanoma, seborrheic keratosis). Everything runs on a
//! small `f64` reverse-mode autodiff engine defined in this crate.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod inference;
pub mod metrics;
mod linalg;
pub mod model;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeRef, Operation};
pub use rng::RngState;
pub use tensor::Tensor;
