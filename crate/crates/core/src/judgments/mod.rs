//! Crowdsourced judgment ingestion and aggregation.
//!
//! Raw per-trial categorization records are parsed from delimited text,
//! annotators are screened by their attention-check accuracy, and the
//! surviving stimulus judgments are aggregated into per-image label
//! distributions. Everything here is a pure function over immutable record
//! slices, so sharding by image and merging is safe.

mod fixture;
mod io;
mod parse;

pub use fixture::{generate_records, write_judgment_file, FixtureAnnotator, FixtureConfig};
pub use io::{read_soft_label_file, write_soft_label_file, write_summary};
pub use parse::{parse_judgments, JudgmentSchema};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::scalar::Scalar;

/// One annotator's categorization of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JudgmentRecord {
    pub annotator_id: String,
    pub image_id: String,
    /// Chosen class index in `[0, K)`.
    pub chosen_class: usize,
    /// Position within the annotator's session.
    pub trial_index: usize,
    pub is_attention_check: bool,
    /// Known for attention checks and ground-truthed images; `None` otherwise.
    pub true_class: Option<usize>,
}

/// Attention-check performance for one annotator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatorStats {
    pub annotator_id: String,
    pub checks_seen: usize,
    pub checks_correct: usize,
    pub accepted: bool,
    /// Accepted by default because the annotator saw no checks at all.
    pub flagged_no_checks: bool,
}

/// Headline statistics for a judgment file.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryStats {
    /// Stimulus (non-attention-check) judgments.
    pub total_judgments: usize,
    pub attention_checks: usize,
    /// Distinct stimulus images.
    pub n_images: usize,
    pub n_annotators: usize,
    pub judgments_per_image_min: usize,
    pub judgments_per_image_mean: f64,
    pub judgments_per_image_max: usize,
    pub rejected_annotators: usize,
    pub accept_threshold: f64,
}

/// Aggregation output: per-image distributions plus the ids of images whose
/// records were all attention checks and therefore contributed nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation<S> {
    pub distributions: BTreeMap<String, LabelDistribution<S>>,
    pub excluded_images: Vec<String>,
}

/// Score every annotator by attention-check accuracy.
///
/// `accepted = checks_correct / checks_seen >= threshold`; annotators with
/// zero checks are accepted and flagged.
pub fn score_annotators(
    records: &[JudgmentRecord],
    threshold: f64,
) -> Result<BTreeMap<String, AnnotatorStats>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::config(format!(
            "attention-check threshold must be in (0,1], got {threshold}"
        )));
    }
    let mut stats: BTreeMap<String, AnnotatorStats> = BTreeMap::new();
    for rec in records {
        let entry = stats
            .entry(rec.annotator_id.clone())
            .or_insert_with(|| AnnotatorStats {
                annotator_id: rec.annotator_id.clone(),
                checks_seen: 0,
                checks_correct: 0,
                accepted: true,
                flagged_no_checks: true,
            });
        if rec.is_attention_check {
            let truth = rec.true_class.ok_or_else(|| {
                Error::data(format!(
                    "attention check without true class for annotator {}",
                    rec.annotator_id
                ))
            })?;
            entry.checks_seen += 1;
            if rec.chosen_class == truth {
                entry.checks_correct += 1;
            }
        }
    }
    for stat in stats.values_mut() {
        if stat.checks_seen > 0 {
            stat.flagged_no_checks = false;
            stat.accepted = stat.checks_correct as f64 / stat.checks_seen as f64 >= threshold;
        }
    }
    Ok(stats)
}

/// Keep stimulus records from accepted annotators. Annotators absent from
/// `stats` are dropped.
pub fn filter_accepted(
    records: &[JudgmentRecord],
    stats: &BTreeMap<String, AnnotatorStats>,
) -> Vec<JudgmentRecord> {
    records
        .iter()
        .filter(|r| {
            !r.is_attention_check
                && stats.get(&r.annotator_id).map(|s| s.accepted).unwrap_or(false)
        })
        .cloned()
        .collect()
}

/// Aggregate stimulus judgments into per-image label distributions.
///
/// `probs[c] = (count_c + smoothing) / (total + K * smoothing)` with
/// `support_count = total`. Attention-check trials never contribute; an
/// image observed only through checks is excluded and reported.
pub fn aggregate_distributions<S: Scalar>(
    records: &[JudgmentRecord],
    k: usize,
    smoothing: S,
) -> Result<Aggregation<S>> {
    if smoothing < S::zero() {
        return Err(Error::config(format!(
            "smoothing must be nonnegative, got {smoothing}"
        )));
    }
    if k == 0 {
        return Err(Error::config("K must be positive"));
    }
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut check_only: BTreeSet<&str> = BTreeSet::new();
    for rec in records {
        if rec.is_attention_check {
            check_only.insert(&rec.image_id);
            continue;
        }
        if rec.chosen_class >= k {
            return Err(Error::data(format!(
                "chosen class {} out of range for K={k} (image {})",
                rec.chosen_class, rec.image_id
            )));
        }
        counts.entry(&rec.image_id).or_insert_with(|| vec![0; k])[rec.chosen_class] += 1;
    }
    let excluded_images = check_only
        .into_iter()
        .filter(|id| !counts.contains_key(id))
        .map(String::from)
        .collect();
    let mut distributions = BTreeMap::new();
    for (image, image_counts) in counts {
        distributions.insert(
            image.to_string(),
            LabelDistribution::from_counts(&image_counts, smoothing)?,
        );
    }
    Ok(Aggregation { distributions, excluded_images })
}

/// Headline statistics; `threshold` feeds the rejected-annotator count.
pub fn dataset_summary(records: &[JudgmentRecord], threshold: f64) -> Result<SummaryStats> {
    let stats = score_annotators(records, threshold)?;
    let rejected = stats.values().filter(|s| !s.accepted).count();
    let mut per_image: BTreeMap<&str, usize> = BTreeMap::new();
    let mut checks = 0usize;
    for rec in records {
        if rec.is_attention_check {
            checks += 1;
        } else {
            *per_image.entry(&rec.image_id).or_insert(0) += 1;
        }
    }
    let total: usize = per_image.values().sum();
    let n_images = per_image.len();
    let (min, max) = per_image
        .values()
        .fold((usize::MAX, 0usize), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    Ok(SummaryStats {
        total_judgments: total,
        attention_checks: checks,
        n_images,
        n_annotators: stats.len(),
        judgments_per_image_min: if n_images == 0 { 0 } else { min },
        judgments_per_image_mean: if n_images == 0 {
            0.0
        } else {
            total as f64 / n_images as f64
        },
        judgments_per_image_max: max,
        rejected_annotators: rejected,
        accept_threshold: threshold,
    })
}
