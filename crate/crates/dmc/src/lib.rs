//! Differentiable multimodal clustering.
//!
//! Feature grids from two modalities are clustered by a smooth-min soft
//! k-means whose k projection matrices are shared across modalities. The
//! resulting centers are compared by cosine proximity and trained with a
//! max-margin loss against mismatched audio. Gradients are propagated by
//! hand through every unrolled clustering iteration.
//!
//! Modules:
//! - [`numerics`]: smooth max/min, softmax, normalization, cosine similarity
//! - [`clustering`]: the alternating assignment/center iteration
//! - [`grad`]: reverse-mode gradients and a finite-difference checker
//! - [`encoder`]: patch encoders turning raw grids into feature sets
//! - [`synth`]: planted synthetic audiovisual scenes
//! - [`loss_train`]: center scores, margin loss, Adam and the training loop
//! - [`eval`]: localization heatmaps, IoU, AUC and match accuracy
//! - [`cli`]: configuration, file formats and subcommands

pub mod cli;
pub mod clustering;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod grad;
pub mod grid;
pub mod loss_train;
pub mod numerics;
pub mod synth;

pub use error::{DmcError, Result};
