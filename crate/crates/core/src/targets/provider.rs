//! Per-epoch target sources for the training loop.
//!
//! Eager policies hand back borrowed views every epoch; sampled-hard and
//! mixup materialize fresh draws lazily per epoch (or per step). All
//! randomness is derived from `(seed, example_index, epoch_index)` streams,
//! so shard order never changes the result.

use std::borrow::Cow;

use ndarray::Array2;

use crate::backend::ClassifierBackend;
use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::scalar::Scalar;
use crate::seeding::derive_seed;
use crate::targets::{
    class_level_targets, distillation_targets, mixup_batch, one_hot_targets,
    sample_hard_with_words, ResampleGranularity, TargetPolicy,
};

/// One epoch's view of the training data. Mixup owns fresh features; every
/// other policy borrows the originals.
pub struct EpochData<'a, S: Scalar> {
    pub features: Cow<'a, Array2<S>>,
    pub targets: Cow<'a, [LabelDistribution<S>]>,
}

pub trait TargetProvider<S: Scalar>: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Features and one target per example for this epoch.
    fn epoch_data(&self, epoch_index: usize) -> Result<EpochData<'_, S>>;

    /// Per-step resampling hook. `None` means the epoch targets stand.
    fn step_targets(
        &self,
        _epoch_index: usize,
        _step_index: usize,
        _indices: &[usize],
    ) -> Option<Result<Vec<LabelDistribution<S>>>> {
        None
    }
}

/// Constant targets: one-hot, human-soft, class-level, or distilled.
pub struct FixedTargetProvider<S> {
    features: Array2<S>,
    targets: Vec<LabelDistribution<S>>,
}

impl<S: Scalar> FixedTargetProvider<S> {
    pub fn new(features: Array2<S>, targets: Vec<LabelDistribution<S>>) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::data(format!(
                "dimension mismatch: {} feature rows vs {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        Ok(Self { features, targets })
    }
}

impl<S: Scalar> TargetProvider<S> for FixedTargetProvider<S> {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn epoch_data(&self, _epoch_index: usize) -> Result<EpochData<'_, S>> {
        Ok(EpochData {
            features: Cow::Borrowed(&self.features),
            targets: Cow::Borrowed(&self.targets),
        })
    }
}

/// One-hot targets redrawn from the soft distributions each epoch (or step).
pub struct SampledHardProvider<S> {
    features: Array2<S>,
    distributions: Vec<LabelDistribution<S>>,
    k: usize,
    seed: u64,
    granularity: ResampleGranularity,
}

impl<S: Scalar> SampledHardProvider<S> {
    pub fn new(
        features: Array2<S>,
        distributions: Vec<LabelDistribution<S>>,
        seed: u64,
        granularity: ResampleGranularity,
    ) -> Result<Self> {
        if features.nrows() != distributions.len() {
            return Err(Error::data(format!(
                "dimension mismatch: {} feature rows vs {} distributions",
                features.nrows(),
                distributions.len()
            )));
        }
        let k = distributions
            .first()
            .map(LabelDistribution::k)
            .ok_or_else(|| Error::data("cannot sample targets from zero distributions"))?;
        Ok(Self { features, distributions, k, seed, granularity })
    }
}

impl<S: Scalar> TargetProvider<S> for SampledHardProvider<S> {
    fn len(&self) -> usize {
        self.distributions.len()
    }

    fn epoch_data(&self, epoch_index: usize) -> Result<EpochData<'_, S>> {
        let labels = sample_hard_with_words(&self.distributions, self.seed, epoch_index, None);
        let targets = one_hot_targets(&labels, self.k)?;
        Ok(EpochData {
            features: Cow::Borrowed(&self.features),
            targets: Cow::Owned(targets),
        })
    }

    fn step_targets(
        &self,
        epoch_index: usize,
        step_index: usize,
        indices: &[usize],
    ) -> Option<Result<Vec<LabelDistribution<S>>>> {
        if self.granularity != ResampleGranularity::PerStep {
            return None;
        }
        let subset: Vec<LabelDistribution<S>> =
            indices.iter().map(|&i| self.distributions[i].clone()).collect();
        let labels =
            sample_hard_with_words(&subset, self.seed, epoch_index, Some(step_index as u64));
        Some(one_hot_targets(&labels, self.k))
    }
}

/// Fresh virtual examples per epoch.
pub struct MixupProvider<S> {
    base_features: Array2<S>,
    base_targets: Vec<LabelDistribution<S>>,
    alpha: f64,
    seed: u64,
}

impl<S: Scalar> MixupProvider<S> {
    pub fn new(
        base_features: Array2<S>,
        base_targets: Vec<LabelDistribution<S>>,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        if base_features.nrows() != base_targets.len() {
            return Err(Error::data(format!(
                "dimension mismatch: {} feature rows vs {} targets",
                base_features.nrows(),
                base_targets.len()
            )));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config(format!("mixup alpha must be positive, got {alpha}")));
        }
        Ok(Self { base_features, base_targets, alpha, seed })
    }
}

impl<S: Scalar> TargetProvider<S> for MixupProvider<S> {
    fn len(&self) -> usize {
        self.base_targets.len()
    }

    fn epoch_data(&self, epoch_index: usize) -> Result<EpochData<'_, S>> {
        let epoch_seed = derive_seed(self.seed, &[epoch_index as u64]);
        let virtuals = mixup_batch(
            self.base_features.view(),
            &self.base_targets,
            self.alpha,
            epoch_seed,
        )?;
        let d = self.base_features.ncols();
        let mut features = Array2::zeros((virtuals.len(), d));
        let mut targets = Vec::with_capacity(virtuals.len());
        for (i, v) in virtuals.into_iter().enumerate() {
            features.row_mut(i).assign(&v.features);
            targets.push(v.target);
        }
        Ok(EpochData { features: Cow::Owned(features), targets: Cow::Owned(targets) })
    }
}

/// Materialize the provider for a policy over one training fold.
///
/// `soft_labels` are required by the human-soft, sampled-hard, and
/// class-soft policies; `distill_sources` by the distillation policy.
pub fn build_provider<S: Scalar>(
    policy: &TargetPolicy,
    features: Array2<S>,
    hard_labels: &[usize],
    soft_labels: Option<&[LabelDistribution<S>]>,
    k: usize,
    seed: u64,
    distill_sources: &[Box<dyn ClassifierBackend<S>>],
) -> Result<Box<dyn TargetProvider<S>>> {
    policy.validate()?;
    if features.nrows() != hard_labels.len() {
        return Err(Error::data(format!(
            "dimension mismatch: {} feature rows vs {} labels",
            features.nrows(),
            hard_labels.len()
        )));
    }
    let need_soft = || {
        soft_labels.ok_or_else(|| {
            Error::data(format!(
                "policy '{}' requires per-example soft labels",
                policy.label()
            ))
        })
    };
    match policy {
        TargetPolicy::OneHot => {
            let targets = one_hot_targets(hard_labels, k)?;
            Ok(Box::new(FixedTargetProvider::new(features, targets)?))
        }
        TargetPolicy::HumanSoft => {
            let targets = need_soft()?.to_vec();
            Ok(Box::new(FixedTargetProvider::new(features, targets)?))
        }
        TargetPolicy::SampledHard { granularity } => {
            let dists = need_soft()?.to_vec();
            Ok(Box::new(SampledHardProvider::new(features, dists, seed, *granularity)?))
        }
        TargetPolicy::ClassSoft => {
            let targets = class_level_targets(need_soft()?, hard_labels, k)?.per_example;
            Ok(Box::new(FixedTargetProvider::new(features, targets)?))
        }
        TargetPolicy::Mixup { alpha } => {
            let base = one_hot_targets(hard_labels, k)?;
            Ok(Box::new(MixupProvider::new(features, base, *alpha, seed)?))
        }
        TargetPolicy::Distill { temperature, .. } => {
            let sources: Vec<&dyn ClassifierBackend<S>> =
                distill_sources.iter().map(AsRef::as_ref).collect();
            let targets = distillation_targets(&sources, features.view(), *temperature)?;
            Ok(Box::new(FixedTargetProvider::new(features, targets)?))
        }
    }
}
