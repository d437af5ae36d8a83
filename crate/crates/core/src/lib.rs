//! Bi-level alignment for domain-adaptive density-map crowd counting.
//!
//! The data level searches a three-unit transform tree (grayscale, scaling,
//! perspective) over the labeled source set with a differentiable surrogate
//! controller, scoring each candidate without target labels by mixing source
//! feature content with target feature statistics. The feature level trains a
//! foreground/background patch discriminator against the extractor through a
//! gradient-reversal layer.
//!
//! Modules, bottom up:
//!
//! - [`imaging`]: pixel operations, geometry and density rendering.
//! - [`transform_tree`]: ratio splits and per-path transforms.
//! - [`synthcrowd`]: seeded synthetic source/target domains.
//! - [`autodiff`] and [`netcore`]: the trainable extractor/estimator/discriminator.
//! - [`adain_val`]: label-free candidate validation.
//! - [`controller`]: encoder/predictor/decoder surrogate over transforms.
//! - [`search`]: the multi-round search and final retraining.
//! - [`evalmetrics`]: MAE, root-mean-square error and rank correlation.

pub mod adain_val;
pub mod autodiff;
pub mod config;
pub mod controller;
pub mod dataset;
pub mod error;
pub mod evalmetrics;
pub mod imaging;
pub mod netcore;
pub mod rng;
pub mod search;
pub mod synthcrowd;
pub mod transform_tree;

pub use error::{Error, Result};
