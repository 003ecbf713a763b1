//! Training, inference and evaluation toolkit for diabetic-retinopathy analysis on
//! OCTA images.
//!
//! The crate covers the full method stack: soft Dice/Jaccard segmentation losses,
//! step and cosine learning-rate policies, the hybrid MixUp/CutMix recipe with a
//! joint label-smoothed objective, k-fold cross validation with checkpoint
//! selection, probability-averaging ensembles with test-time augmentation, and the
//! challenge metrics (Dice, IoU, quadratic-weighted Kappa, one-vs-rest AUC).
//!
//! Everything runs on CPU at desk scale. The [`data::synth`] generator produces a
//! separable OCTA-like corpus so the whole pipeline can be exercised without the
//! restricted challenge data.

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod inference;
pub mod metrics;
pub mod model_zoo;
pub mod nn;
pub mod objectives;
pub mod report;
pub mod rng;
pub mod schedules;
pub mod training;

pub use error::{Error, Result};
pub use image::{BinaryMask, ImageArray, ProbMask};
