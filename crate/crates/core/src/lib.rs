//! Dependency-light inference engine and cost-accounting toolkit for the
//! EdgeFace family of face-recognition backbones.
//!
//! * [`tensor`]: deterministic `f32` kernels (grouped convolution, layer norm,
//!   softmax, pooling, matrix products, GELU).
//! * [`loralin`]: the low-rank linear layer and its exact cost formulas.
//! * [`backbone`]: variant specs, model construction and the embedding forward pass.
//! * [`accounting`]: parameter and multiply-accumulate census, rank-ratio sweeps.
//! * [`losses`], [`gradcheck`], [`train`]: margin losses with analytic
//!   gradients, finite-difference checks and a toy trainer.
//! * [`eval`]: verification metrics (k-fold accuracy, ROC, TAR at FAR).
//! * [`io`]: the weight container, image decoding and pair/score files.

pub mod accounting;
pub mod backbone;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod loralin;
pub mod losses;
pub mod runtime;
pub mod svd;
pub mod tensor;
pub mod train;

pub use accounting::{count, gamma_sweep, CostReport, CostRow, SweepRow};
pub use backbone::{EdgeFaceModel, Variant, VariantSpec};
pub use error::{ContainerError, Error, Result};
pub use loralin::{layer_cost, rank_for, LayerCost, LoRaLinLayer, Linear, LinearDescriptor};
pub use tensor::{ConvParams, Tensor};
