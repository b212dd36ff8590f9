//! FuseNet: dual-stream self-supervised image segmentation.
//!
//! A self-contained implementation of per-image self-labelling
//! segmentation: a small shared-weight dual-stream network with linear
//! cross-attention, trained on a single image by minimizing a clustering
//! cross-entropy combined with a cross-modal contrastive term and an edge
//! refinement term. Everything runs on a hand-built reverse-mode
//! differentiation engine so gradients can be verified against finite
//! differences end to end.
//!
//! Module map:
//! - [`numerics`] — tensors, the computation graph, backward, gradcheck
//! - [`augment`] — photometric view generation (jitter + blur)
//! - [`model`] — the dual-stream network
//! - [`losses`] — clustering CE, contrastive fusion, edge refinement
//! - [`trainer`] — the per-image optimization loop
//! - [`metrics`] — best-overlap evaluation (DSC / XOR / HM)
//! - [`imageio`], [`config`], [`fixtures`], [`gradcheck_suite`] — plumbing
//!
//! All numeric code is generic over [`numerics::Scalar`]; the aliases below
//! fix the default f64 instantiation used by the shipped pipeline.

pub mod augment;
pub mod config;
pub mod fixtures;
pub mod gradcheck_suite;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

/// Default-precision tensor (f64).
pub type Tensor64 = numerics::Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = numerics::Tensor<f32>;
/// Default-precision computation graph.
pub type Graph64 = numerics::Graph<f64>;
/// An `[h,w,c]` image with values in [0,1], at default precision.
pub type ImageTensor = Tensor64;

pub use model::SegmentationMap;
