//! Training-target policies.
//!
//! Six ways of producing the per-example distributions a classifier is
//! trained against: one-hot ground truth, human soft labels, hard labels
//! sampled from those distributions, class-level renormalized penalties,
//! mixup virtual examples, and distillation from source-model ensembles.

mod provider;

pub use provider::{
    build_provider, EpochData, FixedTargetProvider, MixupProvider, SampledHardProvider,
    TargetProvider,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::backend::ClassifierBackend;
use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::scalar::Scalar;
use crate::seeding::{derive_rng, stream};

/// When sampled-hard targets are redrawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleGranularity {
    /// A fresh draw per epoch (the default experimental procedure).
    #[default]
    PerEpoch,
    /// A fresh draw per gradient step.
    PerStep,
}

fn default_temperature() -> f64 {
    1.0
}

/// Declarative description of how training targets are produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// All mass on the ground-truth class (control condition).
    OneHot,
    /// The aggregated human label distribution, per image.
    HumanSoft,
    /// One-hot labels resampled from the human distributions.
    SampledHard {
        #[serde(default)]
        granularity: ResampleGranularity,
    },
    /// Class-level penalty vectors: human distributions summed and
    /// renormalized within each ground-truth class.
    ClassSoft,
    /// Convex combinations of example pairs with Beta(alpha, alpha) weights.
    Mixup { alpha: f64 },
    /// Mean of temperature-scaled source-model predictions.
    Distill {
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default)]
        sources: Vec<PathBuf>,
    },
}

impl TargetPolicy {
    /// Check kind-specific parameters.
    pub fn validate(&self) -> Result<()> {
        match self {
            TargetPolicy::Mixup { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::config(format!("mixup alpha must be positive, got {alpha}")));
                }
            }
            TargetPolicy::Distill { temperature, .. } => {
                if !(temperature.is_finite() && *temperature > 0.0) {
                    return Err(Error::config(format!(
                        "distillation temperature must be positive, got {temperature}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether building targets under this policy needs per-example soft
    /// labels.
    pub fn requires_soft_labels(&self) -> bool {
        matches!(
            self,
            TargetPolicy::HumanSoft | TargetPolicy::SampledHard { .. } | TargetPolicy::ClassSoft
        )
    }

    /// Directory- and report-safe identifier.
    pub fn label(&self) -> String {
        match self {
            TargetPolicy::OneHot => "one-hot".into(),
            TargetPolicy::HumanSoft => "human-soft".into(),
            TargetPolicy::SampledHard { granularity: ResampleGranularity::PerEpoch } => {
                "sampled-hard".into()
            }
            TargetPolicy::SampledHard { granularity: ResampleGranularity::PerStep } => {
                "sampled-hard-per-step".into()
            }
            TargetPolicy::ClassSoft => "class-soft".into(),
            TargetPolicy::Mixup { alpha } => format!("mixup-a{alpha}"),
            TargetPolicy::Distill { temperature, .. } => format!("distill-t{temperature}"),
        }
    }
}

/// One-hot target per hard label.
pub fn one_hot_targets<S: Scalar>(
    hard_labels: &[usize],
    k: usize,
) -> Result<Vec<LabelDistribution<S>>> {
    hard_labels.iter().map(|&y| LabelDistribution::one_hot(y, k)).collect()
}

/// Look up the aggregated distribution for every id, in dataset order.
pub fn human_soft_targets<S: Scalar>(
    distributions: &BTreeMap<String, LabelDistribution<S>>,
    image_ids: &[String],
) -> Result<Vec<LabelDistribution<S>>> {
    image_ids
        .iter()
        .map(|id| {
            distributions
                .get(id)
                .cloned()
                .ok_or_else(|| Error::data(format!("no soft label for image '{id}'")))
        })
        .collect()
}

fn sample_class<S: Scalar>(dist: &LabelDistribution<S>, u: f64) -> usize {
    let mut cum = 0.0f64;
    let mut last_nonzero = 0usize;
    for (c, &p) in dist.probs().iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_nonzero = c;
        }
        cum += p;
        if u < cum {
            return c;
        }
    }
    last_nonzero
}

pub(crate) fn sample_hard_with_words<S: Scalar>(
    distributions: &[LabelDistribution<S>],
    seed: u64,
    epoch_index: usize,
    extra: Option<u64>,
) -> Vec<usize> {
    distributions
        .iter()
        .enumerate()
        .map(|(i, dist)| {
            let mut rng = match extra {
                None => {
                    derive_rng(seed, &[stream::SAMPLED_TARGETS, i as u64, epoch_index as u64])
                }
                Some(step) => derive_rng(
                    seed,
                    &[stream::SAMPLED_TARGETS, i as u64, epoch_index as u64, step],
                ),
            };
            sample_class(dist, rng.random::<f64>())
        })
        .collect()
}

/// Draw one hard label per image from its categorical distribution.
/// Deterministic given `(seed, epoch_index)`; a new draw per epoch. The
/// per-example stream depends only on `(seed, example_index, epoch_index)`,
/// so parallel evaluation is safe.
pub fn sample_hard_targets<S: Scalar>(
    distributions: &[LabelDistribution<S>],
    seed: u64,
    epoch_index: usize,
) -> Vec<usize> {
    sample_hard_with_words(distributions, seed, epoch_index, None)
}

/// Class-level penalty vectors plus the per-example targets they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassLevelTargets<S> {
    /// Row `c` is the normalized sum of human distributions over examples
    /// with hard label `c`.
    pub penalty_matrix: Vec<LabelDistribution<S>>,
    pub per_example: Vec<LabelDistribution<S>>,
}

/// Sum and renormalize human distributions within each ground-truth class,
/// yielding at most `k` unique soft vectors.
pub fn class_level_targets<S: Scalar>(
    distributions: &[LabelDistribution<S>],
    hard_labels: &[usize],
    k: usize,
) -> Result<ClassLevelTargets<S>> {
    if distributions.len() != hard_labels.len() {
        return Err(Error::data(format!(
            "dimension mismatch: {} distributions vs {} labels",
            distributions.len(),
            hard_labels.len()
        )));
    }
    let mut sums = vec![vec![S::zero(); k]; k];
    let mut counts = vec![0usize; k];
    for (dist, &y) in distributions.iter().zip(hard_labels) {
        if y >= k {
            return Err(Error::data(format!("label {y} out of range for K={k}")));
        }
        if dist.k() != k {
            return Err(Error::data(format!(
                "distribution has {} classes, expected {k}",
                dist.k()
            )));
        }
        for (c, &p) in dist.probs().iter().enumerate() {
            sums[y][c] += p;
        }
        counts[y] += 1;
    }
    let mut penalty_matrix = Vec::with_capacity(k);
    for (c, row) in sums.into_iter().enumerate() {
        if counts[c] == 0 {
            return Err(Error::data(format!(
                "class {c} has zero examples; penalty row undefined"
            )));
        }
        let total: S = row.iter().copied().sum();
        let normalized: Vec<S> = row.into_iter().map(|v| v / total).collect();
        penalty_matrix.push(LabelDistribution::new(normalized, counts[c])?);
    }
    let per_example =
        hard_labels.iter().map(|&y| penalty_matrix[y].clone()).collect();
    Ok(ClassLevelTargets { penalty_matrix, per_example })
}

/// A mixed training example.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualExample<S> {
    pub features: Array1<S>,
    pub target: LabelDistribution<S>,
    pub lambda: S,
    pub source_pair: (usize, usize),
}

/// Mix a single pair with a fixed lambda.
pub fn mix_pair<S: Scalar>(
    xi: &Array1<S>,
    xj: &Array1<S>,
    yi: &LabelDistribution<S>,
    yj: &LabelDistribution<S>,
    lambda: S,
    source_pair: (usize, usize),
) -> Result<VirtualExample<S>> {
    if xi.len() != xj.len() {
        return Err(Error::data(format!(
            "dimension mismatch: features of length {} and {}",
            xi.len(),
            xj.len()
        )));
    }
    let features = xi * lambda + xj * (S::one() - lambda);
    let target = LabelDistribution::mix(yi, yj, lambda)?;
    Ok(VirtualExample { features, target, lambda, source_pair })
}

/// Build one virtual example per input example: lambda ~ Beta(alpha, alpha),
/// partner chosen by a seeded permutation of the batch.
pub fn mixup_batch<S: Scalar>(
    features: ArrayView2<'_, S>,
    targets: &[LabelDistribution<S>],
    alpha: f64,
    seed: u64,
) -> Result<Vec<VirtualExample<S>>> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config(format!("mixup alpha must be positive, got {alpha}")));
    }
    let n = features.nrows();
    if targets.len() != n {
        return Err(Error::data(format!(
            "dimension mismatch: {n} feature rows vs {} targets",
            targets.len()
        )));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::config(format!("invalid Beta({alpha}, {alpha}): {e}")))?;
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(&mut derive_rng(seed, &[stream::MIXUP_PAIRING]));

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = derive_rng(seed, &[stream::MIXUP_LAMBDA, i as u64]);
        let lambda = S::cast(beta.sample(&mut rng));
        let j = partner[i];
        let xi = features.row(i).to_owned();
        let xj = features.row(j).to_owned();
        out.push(mix_pair(&xi, &xj, &targets[i], &targets[j], lambda, (i, j))?);
    }
    Ok(out)
}

fn temperature_scale<S: Scalar>(probs: &[S], temperature: f64) -> Vec<S> {
    if temperature == 1.0 {
        return probs.to_vec();
    }
    let inv_t = S::cast(1.0 / temperature);
    let powed: Vec<S> = probs.iter().map(|&p| p.powf(inv_t)).collect();
    let sum: S = powed.iter().copied().sum();
    powed.into_iter().map(|p| p / sum).collect()
}

/// Average each source model's temperature-scaled predictive distribution.
/// The result is the arithmetic mean, so permuting the model list leaves the
/// output unchanged up to rounding.
pub fn distillation_targets<S: Scalar>(
    sources: &[&dyn ClassifierBackend<S>],
    features: ArrayView2<'_, S>,
    temperature: f64,
) -> Result<Vec<LabelDistribution<S>>> {
    if sources.is_empty() {
        return Err(Error::config("distillation requires at least one source model"));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::config(format!(
            "distillation temperature must be positive, got {temperature}"
        )));
    }
    let k = sources[0].n_classes();
    let n = features.nrows();
    let mut sums = vec![vec![S::zero(); k]; n];
    for (m, model) in sources.iter().enumerate() {
        if model.n_classes() != k {
            return Err(Error::data(format!(
                "source model {m} outputs {} classes, expected {k}",
                model.n_classes()
            )));
        }
        let preds = model.predict_proba(features)?;
        for (sum, pred) in sums.iter_mut().zip(&preds) {
            for (acc, &p) in sum.iter_mut().zip(temperature_scale(pred.probs(), temperature).iter())
            {
                *acc += p;
            }
        }
    }
    let scale = S::one() / S::cast(sources.len() as f64);
    sums.into_iter()
        .map(|row| LabelDistribution::new(row.into_iter().map(|v| v * scale).collect(), 0))
        .collect()
}
