//! Semi-supervised domain adaptation with inter-domain mixup and
//! neighborhood expansion.
//!
//! A small MLP feature extractor feeds a temperature-scaled cosine
//! (prototypical) classifier. Training combines supervised cross-entropy on
//! labeled source and target samples, sample- and manifold-level mixup of
//! source/target pairs, and three terms on unlabeled target samples:
//! consistency for confident samples, complementary-label loss for
//! unconfident ones, and pairwise approaching towards labeled target
//! samples. Confident unlabeled samples are pseudo-labeled at the start of
//! every epoch and join the labeled target pool.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what training and
//! the CLI use.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mixup;
pub mod model;
pub mod oracle;
pub mod pseudo;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Params64 = model::ModelParams<f64>;
pub type Params32 = model::ModelParams<f32>;
pub type Prediction64 = model::Prediction<f64>;
pub type Checkpoint64 = model::checkpoint::Checkpoint<f64>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
