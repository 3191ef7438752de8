//! Soft-label classification toolkit.
//!
//! The crate turns raw per-trial human categorization judgments into
//! per-image label distributions, produces training targets under six
//! competing policies, trains a built-in differentiable reference classifier
//! with k-fold cross validation, scores models with distribution-aware
//! metrics, attacks them with FGSM/PGD under an l-inf budget, and
//! orchestrates end-to-end experiments against a synthetic world whose soft
//! labels are exact Bayes posteriors.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below pin the default double-precision instantiations.

pub mod attacks;
pub mod backend;
pub mod bench;
pub mod error;
pub mod judgments;
pub mod label;
pub mod metrics;
pub mod scalar;
pub mod seeding;
pub mod targets;
pub mod training;

pub use error::{Error, Result};
pub use label::LabelDistribution;
pub use scalar::Scalar;

/// Concrete double-precision instantiations of the generic core types.
pub type LabelDistribution64 = LabelDistribution<f64>;
pub type ReferenceModel64 = training::ReferenceModel<f64>;
pub type SoftLabelDataset64 = bench::SoftLabelDataset<f64>;
pub type VirtualExample64 = targets::VirtualExample<f64>;
pub type ParamSnapshot64 = backend::ParamSnapshot<f64>;

/// Single-precision variants of the main types.
pub type LabelDistribution32 = LabelDistribution<f32>;
pub type ReferenceModel32 = training::ReferenceModel<f32>;
pub type SoftLabelDataset32 = bench::SoftLabelDataset<f32>;
