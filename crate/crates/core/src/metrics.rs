//! Evaluation metrics over label distributions.
//!
//! Cross-entropy is measured in nats with predicted probabilities clamped to
//! [`LOG_CLAMP_EPS`] before the log, so degenerate predictions stay finite
//! and attack losses are reproducible. All ranking ties break toward the
//! lowest class index.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::backend::ClassifierBackend;
use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::scalar::Scalar;

/// Floor applied to predicted probabilities before taking the log.
pub const LOG_CLAMP_EPS: f64 = 1e-12;

fn clamped_ln<S: Scalar>(p: S) -> S {
    p.max(S::cast(LOG_CLAMP_EPS)).ln()
}

/// Cross-entropy `-sum_c target[c] * ln(predicted[c])` in nats.
pub fn cross_entropy<S: Scalar>(
    predicted: &LabelDistribution<S>,
    target: &LabelDistribution<S>,
) -> Result<S> {
    if predicted.k() != target.k() {
        return Err(Error::data(format!(
            "dimension mismatch: predicted has {} classes, target {}",
            predicted.k(),
            target.k()
        )));
    }
    let mut ce = S::zero();
    for (&p, &t) in predicted.probs().iter().zip(target.probs()) {
        ce -= t * clamped_ln(p);
    }
    Ok(ce)
}

/// Mean cross-entropy over aligned prediction/target sequences.
pub fn mean_cross_entropy<S: Scalar>(
    predictions: &[LabelDistribution<S>],
    targets: &[LabelDistribution<S>],
) -> Result<S> {
    if predictions.len() != targets.len() {
        return Err(Error::data(format!(
            "dimension mismatch: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::data("cannot average over zero examples"));
    }
    let mut total = S::zero();
    for (p, t) in predictions.iter().zip(targets) {
        total += cross_entropy(p, t)?;
    }
    Ok(total / S::cast(predictions.len() as f64))
}

/// Mean `-ln(predicted[label])` against hard labels.
pub fn mean_cross_entropy_vs_labels<S: Scalar>(
    predictions: &[LabelDistribution<S>],
    hard_labels: &[usize],
) -> Result<S> {
    check_aligned(predictions, hard_labels)?;
    let mut total = S::zero();
    for (p, &y) in predictions.iter().zip(hard_labels) {
        let prob = p
            .get(y)
            .ok_or_else(|| Error::data(format!("label {y} out of range for K={}", p.k())))?;
        total -= clamped_ln(prob);
    }
    Ok(total / S::cast(predictions.len() as f64))
}

fn check_aligned<S: Scalar>(predictions: &[LabelDistribution<S>], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::data(format!(
            "dimension mismatch: {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::data("cannot evaluate zero examples"));
    }
    Ok(())
}

/// Fraction of examples whose argmax prediction equals the hard label.
pub fn top1_accuracy<S: Scalar>(
    predictions: &[LabelDistribution<S>],
    hard_labels: &[usize],
) -> Result<f64> {
    check_aligned(predictions, hard_labels)?;
    let mut correct = 0usize;
    for (p, &y) in predictions.iter().zip(hard_labels) {
        if y >= p.k() {
            return Err(Error::data(format!("label {y} out of range for K={}", p.k())));
        }
        if p.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / predictions.len() as f64)
}

/// Second-best accuracy result. `fraction` is over included examples;
/// examples whose reference lacks a distinct second class are excluded and
/// counted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbaOutcome {
    pub fraction: Option<f64>,
    pub n_included: usize,
    pub n_excluded: usize,
}

/// Fraction of examples where the model's second-ranked class equals the
/// reference distribution's second-ranked class.
pub fn second_best_accuracy<S: Scalar>(
    predictions: &[LabelDistribution<S>],
    reference: &[LabelDistribution<S>],
) -> Result<SbaOutcome> {
    if predictions.len() != reference.len() {
        return Err(Error::data(format!(
            "dimension mismatch: {} predictions vs {} references",
            predictions.len(),
            reference.len()
        )));
    }
    let mut included = 0usize;
    let mut excluded = 0usize;
    let mut matches = 0usize;
    for (p, r) in predictions.iter().zip(reference) {
        if p.k() != r.k() {
            return Err(Error::data(format!(
                "dimension mismatch: prediction has {} classes, reference {}",
                p.k(),
                r.k()
            )));
        }
        if !r.has_distinct_second() {
            excluded += 1;
            continue;
        }
        included += 1;
        let (_, p2) = p.top2().ok_or_else(|| Error::data("single-class prediction"))?;
        let (_, r2) = r.top2().expect("distinct second implies k >= 2");
        if p2 == r2 {
            matches += 1;
        }
    }
    Ok(SbaOutcome {
        fraction: (included > 0).then(|| matches as f64 / included as f64),
        n_included: included,
        n_excluded: excluded,
    })
}

/// Alternative reading of second-best accuracy: the ground-truth label
/// appears among the prediction's top two classes.
pub fn second_best_accuracy_truth_in_top2<S: Scalar>(
    predictions: &[LabelDistribution<S>],
    hard_labels: &[usize],
) -> Result<SbaOutcome> {
    check_aligned(predictions, hard_labels)?;
    let mut matches = 0usize;
    for (p, &y) in predictions.iter().zip(hard_labels) {
        let (first, second) = p.top2().ok_or_else(|| Error::data("single-class prediction"))?;
        if y == first || y == second {
            matches += 1;
        }
    }
    Ok(SbaOutcome {
        fraction: Some(matches as f64 / predictions.len() as f64),
        n_included: predictions.len(),
        n_excluded: 0,
    })
}

/// Mean max-probability confidence over the correct / incorrect partitions.
/// A mean is absent when its partition is empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceSplit {
    pub mean_confidence_correct: Option<f64>,
    pub mean_confidence_incorrect: Option<f64>,
}

pub fn confidence_split<S: Scalar>(
    predictions: &[LabelDistribution<S>],
    hard_labels: &[usize],
) -> Result<ConfidenceSplit> {
    check_aligned(predictions, hard_labels)?;
    let (mut sum_c, mut n_c, mut sum_i, mut n_i) = (0.0f64, 0usize, 0.0f64, 0usize);
    for (p, &y) in predictions.iter().zip(hard_labels) {
        let conf = p.max_prob().as_f64();
        if p.argmax() == y {
            sum_c += conf;
            n_c += 1;
        } else {
            sum_i += conf;
            n_i += 1;
        }
    }
    Ok(ConfidenceSplit {
        mean_confidence_correct: (n_c > 0).then(|| sum_c / n_c as f64),
        mean_confidence_incorrect: (n_i > 0).then(|| sum_i / n_i as f64),
    })
}

/// Which second-best-accuracy reading `evaluate` reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SbaMode {
    /// Model's second-ranked class matches the reference's second-ranked
    /// class.
    #[default]
    SecondRankMatch,
    /// Ground-truth label lands in the model's top two.
    TruthInTop2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub sba_mode: SbaMode,
}

/// Per-dataset metric bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dataset_name: String,
    pub n_examples: usize,
    pub top1_accuracy: f64,
    pub sba: Option<f64>,
    /// Examples skipped by the second-best metric because the reference had
    /// no distinct second class.
    pub sba_excluded: usize,
    pub crossentropy_vs_hard: f64,
    pub crossentropy_vs_soft: Option<f64>,
    pub mean_confidence_correct: Option<f64>,
    pub mean_confidence_incorrect: Option<f64>,
}

/// Compute every `EvalReport` field from precomputed predictions.
/// `crossentropy_vs_soft` and `sba` are populated iff `soft_reference` is
/// given.
pub fn evaluate_predictions<S: Scalar>(
    predictions: &[LabelDistribution<S>],
    hard_labels: &[usize],
    soft_reference: Option<&[LabelDistribution<S>]>,
    dataset_name: &str,
    options: &EvalOptions,
) -> Result<EvalReport> {
    check_aligned(predictions, hard_labels)?;
    let top1 = top1_accuracy(predictions, hard_labels)?;
    let ce_hard = mean_cross_entropy_vs_labels(predictions, hard_labels)?.as_f64();
    let split = confidence_split(predictions, hard_labels)?;
    let (ce_soft, sba, sba_excluded) = match soft_reference {
        Some(reference) => {
            let ce = mean_cross_entropy(predictions, reference)?.as_f64();
            let outcome = match options.sba_mode {
                SbaMode::SecondRankMatch => second_best_accuracy(predictions, reference)?,
                SbaMode::TruthInTop2 => {
                    second_best_accuracy_truth_in_top2(predictions, hard_labels)?
                }
            };
            (Some(ce), outcome.fraction, outcome.n_excluded)
        }
        None => (None, None, 0),
    };
    Ok(EvalReport {
        dataset_name: dataset_name.to_string(),
        n_examples: predictions.len(),
        top1_accuracy: top1,
        sba,
        sba_excluded,
        crossentropy_vs_hard: ce_hard,
        crossentropy_vs_soft: ce_soft,
        mean_confidence_correct: split.mean_confidence_correct,
        mean_confidence_incorrect: split.mean_confidence_incorrect,
    })
}

/// Run a backend over `features` and evaluate the predictions.
pub fn evaluate<S: Scalar, B: ClassifierBackend<S> + ?Sized>(
    backend: &B,
    features: ArrayView2<'_, S>,
    hard_labels: &[usize],
    soft_reference: Option<&[LabelDistribution<S>]>,
    dataset_name: &str,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let predictions = backend.predict_proba(features)?;
    evaluate_predictions(&predictions, hard_labels, soft_reference, dataset_name, options)
}

const ABSENT: &str = "absent";

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.17e}"),
        None => ABSENT.to_string(),
    }
}

fn parse_opt(raw: &str, line: u64) -> Result<Option<f64>> {
    if raw == ABSENT {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("bad metric value '{raw}'")))
}

impl EvalReport {
    /// Structured key:value text; floats carry 18 significant digits so the
    /// round-trip is exact. Absent metrics render as `absent`, never 0.
    pub fn write_key_value<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "dataset_name: {}", self.dataset_name)?;
        writeln!(writer, "n_examples: {}", self.n_examples)?;
        writeln!(writer, "top1_accuracy: {:.17e}", self.top1_accuracy)?;
        writeln!(writer, "sba: {}", fmt_opt(self.sba))?;
        writeln!(writer, "sba_excluded: {}", self.sba_excluded)?;
        writeln!(writer, "crossentropy_vs_hard: {:.17e}", self.crossentropy_vs_hard)?;
        writeln!(writer, "crossentropy_vs_soft: {}", fmt_opt(self.crossentropy_vs_soft))?;
        writeln!(writer, "mean_confidence_correct: {}", fmt_opt(self.mean_confidence_correct))?;
        writeln!(
            writer,
            "mean_confidence_incorrect: {}",
            fmt_opt(self.mean_confidence_incorrect)
        )?;
        Ok(())
    }

    pub fn read_key_value<R: Read>(reader: R) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for (idx, l) in BufReader::new(reader).lines().enumerate() {
            let l = l.map_err(Error::Io)?;
            if l.trim().is_empty() {
                continue;
            }
            let lineno = idx as u64 + 1;
            let (key, value) = l
                .split_once(": ")
                .ok_or_else(|| Error::parse(lineno, format!("expected 'key: value', got '{l}'")))?;
            fields.insert(key.to_string(), (value.to_string(), lineno));
        }
        let take = |key: &str| -> Result<(String, u64)> {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| Error::data(format!("report missing field '{key}'")))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            let (raw, line) = take(key)?;
            raw.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("bad value for {key}: '{raw}'")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            let (raw, line) = take(key)?;
            raw.parse::<usize>()
                .map_err(|_| Error::parse(line, format!("bad value for {key}: '{raw}'")))
        };
        let parse_option = |key: &str| -> Result<Option<f64>> {
            let (raw, line) = take(key)?;
            parse_opt(&raw, line)
        };
        Ok(EvalReport {
            dataset_name: take("dataset_name")?.0,
            n_examples: parse_usize("n_examples")?,
            top1_accuracy: parse_f64("top1_accuracy")?,
            sba: parse_option("sba")?,
            sba_excluded: parse_usize("sba_excluded")?,
            crossentropy_vs_hard: parse_f64("crossentropy_vs_hard")?,
            crossentropy_vs_soft: parse_option("crossentropy_vs_soft")?,
            mean_confidence_correct: parse_option("mean_confidence_correct")?,
            mean_confidence_incorrect: parse_option("mean_confidence_incorrect")?,
        })
    }
}

/// Mean and sample standard deviation of one metric across folds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

/// Mean/std over a set of per-fold reports. Optional metrics aggregate over
/// the folds where they are present and stay absent when no fold has them.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub n_reports: usize,
    pub top1_accuracy: MetricSummary,
    pub crossentropy_vs_hard: MetricSummary,
    pub crossentropy_vs_soft: Option<MetricSummary>,
    pub sba: Option<MetricSummary>,
    pub mean_confidence_correct: Option<MetricSummary>,
    pub mean_confidence_incorrect: Option<MetricSummary>,
}

pub fn aggregate_reports<'a>(
    reports: impl IntoIterator<Item = &'a EvalReport>,
) -> Result<AggregateReport> {
    let reports: Vec<&EvalReport> = reports.into_iter().collect();
    if reports.is_empty() {
        return Err(Error::data("cannot aggregate zero reports"));
    }
    let collect = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Vec<f64> {
        reports.iter().filter_map(|r| f(r)).collect()
    };
    let top1 = MetricSummary::from_values(&collect(&|r| Some(r.top1_accuracy)))
        .expect("nonempty reports");
    let ce_hard = MetricSummary::from_values(&collect(&|r| Some(r.crossentropy_vs_hard)))
        .expect("nonempty reports");
    Ok(AggregateReport {
        n_reports: reports.len(),
        top1_accuracy: top1,
        crossentropy_vs_hard: ce_hard,
        crossentropy_vs_soft: MetricSummary::from_values(&collect(&|r| r.crossentropy_vs_soft)),
        sba: MetricSummary::from_values(&collect(&|r| r.sba)),
        mean_confidence_correct: MetricSummary::from_values(&collect(&|r| {
            r.mean_confidence_correct
        })),
        mean_confidence_incorrect: MetricSummary::from_values(&collect(&|r| {
            r.mean_confidence_incorrect
        })),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    type Dist = LabelDistribution<f64>;

    fn dist(probs: &[f64]) -> Dist {
        Dist::new(probs.to_vec(), 0).unwrap()
    }

    #[test]
    fn ce_of_matching_one_hot_is_zero() {
        let d = Dist::one_hot(4, 10).unwrap();
        assert_eq!(cross_entropy(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn ce_of_uniform_prediction_is_ln_k() {
        let uniform = Dist::uniform(10).unwrap();
        for target in [Dist::one_hot(7, 10).unwrap(), dist(&[0.1; 10])] {
            let ce = cross_entropy(&uniform, &target).unwrap();
            assert!((ce - 10f64.ln()).abs() < 1e-12, "ce = {ce}");
        }
    }

    #[test]
    fn ce_matches_direct_arithmetic() {
        // Independent route: -(0.5 ln 0.7 + 0.5 ln 0.2).
        let expected = -(0.5 * 0.7f64.ln() + 0.5 * 0.2f64.ln());
        assert!((expected - 0.983_056_428_186_416_4).abs() < 1e-12);
        let ce = cross_entropy(&dist(&[0.7, 0.2, 0.1]), &dist(&[0.5, 0.5, 0.0])).unwrap();
        assert!((ce - expected).abs() < 1e-12);
        assert!((ce - 0.98306).abs() < 5e-6);
    }

    #[test]
    fn ce_with_one_hot_target_is_exactly_neg_log() {
        let p = dist(&[0.7, 0.2, 0.1]);
        let t = Dist::one_hot(1, 3).unwrap();
        assert_eq!(cross_entropy(&p, &t).unwrap(), -0.2f64.ln());
        let labels = [1usize];
        let preds = [p];
        assert_eq!(
            mean_cross_entropy_vs_labels(&preds, &labels).unwrap(),
            -0.2f64.ln()
        );
    }

    #[test]
    fn ce_dimension_mismatch() {
        let a = Dist::uniform(3).unwrap();
        let b = Dist::uniform(4).unwrap();
        assert!(cross_entropy(&a, &b).is_err());
    }

    #[test]
    fn ce_clamps_zero_probabilities() {
        let p = dist(&[1.0, 0.0]);
        let t = Dist::one_hot(1, 2).unwrap();
        let ce = cross_entropy(&p, &t).unwrap();
        assert!((ce - (-LOG_CLAMP_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn top1_examples() {
        let k = 5;
        let labels = [0usize, 1, 2, 3];
        let right: Vec<Dist> = labels.iter().map(|&y| Dist::one_hot(y, k).unwrap()).collect();
        assert_eq!(top1_accuracy(&right, &labels).unwrap(), 1.0);
        let wrong: Vec<Dist> =
            labels.iter().map(|&y| Dist::one_hot((y + 1) % k, k).unwrap()).collect();
        assert_eq!(top1_accuracy(&wrong, &labels).unwrap(), 0.0);
        let mut mixed = right.clone();
        mixed[3] = Dist::one_hot(0, k).unwrap();
        assert_eq!(top1_accuracy(&mixed, &labels).unwrap(), 0.75);
    }

    #[test]
    fn sba_second_rank_matching() {
        let pred_match = dist(&[0.6, 0.3, 0.1]);
        let pred_miss = dist(&[0.6, 0.1, 0.3]);
        let reference = dist(&[0.5, 0.4, 0.1]);
        let out =
            second_best_accuracy(&[pred_match.clone()], &[reference.clone()]).unwrap();
        assert_eq!(out.fraction, Some(1.0));
        let out = second_best_accuracy(&[pred_miss], &[reference.clone()]).unwrap();
        assert_eq!(out.fraction, Some(0.0));
        // Identical sets score 1.0.
        let set = vec![dist(&[0.2, 0.5, 0.3]), dist(&[0.9, 0.05, 0.05])];
        let out = second_best_accuracy(&set, &set).unwrap();
        assert_eq!(out.fraction, Some(1.0));
        assert_eq!(out.n_excluded, 0);
    }

    #[test]
    fn sba_excludes_references_without_second_class() {
        let preds = vec![dist(&[0.6, 0.3, 0.1]), dist(&[0.6, 0.3, 0.1])];
        let refs = vec![Dist::one_hot(0, 3).unwrap(), dist(&[0.5, 0.4, 0.1])];
        let out = second_best_accuracy(&preds, &refs).unwrap();
        assert_eq!(out.n_excluded, 1);
        assert_eq!(out.n_included, 1);
        assert_eq!(out.fraction, Some(1.0));
    }

    #[test]
    fn sba_truth_in_top2() {
        let preds = vec![dist(&[0.6, 0.3, 0.1]), dist(&[0.6, 0.3, 0.1])];
        let out = second_best_accuracy_truth_in_top2(&preds, &[1, 2]).unwrap();
        assert_eq!(out.fraction, Some(0.5));
    }

    #[test]
    fn confidence_split_examples() {
        let preds = vec![dist(&[0.9, 0.1]), dist(&[0.6, 0.4])];
        let split = confidence_split(&preds, &[0, 1]).unwrap();
        assert_eq!(split.mean_confidence_correct, Some(0.9));
        assert_eq!(split.mean_confidence_incorrect, Some(0.6));

        let all_correct = vec![Dist::one_hot(0, 4).unwrap()];
        let split = confidence_split(&all_correct, &[0]).unwrap();
        assert_eq!(split.mean_confidence_correct, Some(1.0));
        assert_eq!(split.mean_confidence_incorrect, None);

        let uniform = vec![Dist::uniform(10).unwrap(); 3];
        let split = confidence_split(&uniform, &[0, 1, 2]).unwrap();
        // Uniform predictions argmax to class 0 under the tie-break.
        assert_eq!(split.mean_confidence_correct, Some(0.1));
        assert_eq!(split.mean_confidence_incorrect, Some(0.1));
    }

    #[test]
    fn report_key_value_round_trips() {
        let report = EvalReport {
            dataset_name: "holdout".into(),
            n_examples: 100,
            top1_accuracy: 0.83,
            sba: None,
            sba_excluded: 3,
            crossentropy_vs_hard: 0.512345678901234,
            crossentropy_vs_soft: Some(0.3),
            mean_confidence_correct: Some(0.91),
            mean_confidence_incorrect: None,
        };
        let mut buf = Vec::new();
        report.write_key_value(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("sba: absent"));
        let reread = EvalReport::read_key_value(buf.as_slice()).unwrap();
        assert_eq!(reread, report);
    }

    #[test]
    fn ranking_metrics_survive_temperature_rescaling() {
        // Strictly monotone rescaling preserves ranks, so top-1 and SBA are
        // unchanged.
        let preds = vec![dist(&[0.5, 0.3, 0.2]), dist(&[0.1, 0.2, 0.7])];
        let refs = vec![dist(&[0.4, 0.35, 0.25]), dist(&[0.2, 0.3, 0.5])];
        let labels = [0usize, 2];
        let rescaled: Vec<Dist> = preds
            .iter()
            .map(|d| {
                let powed: Vec<f64> = d.probs().iter().map(|p| p.powf(1.0 / 2.5)).collect();
                let sum: f64 = powed.iter().sum();
                Dist::new(powed.into_iter().map(|p| p / sum).collect(), 0).unwrap()
            })
            .collect();
        assert_eq!(
            top1_accuracy(&preds, &labels).unwrap(),
            top1_accuracy(&rescaled, &labels).unwrap()
        );
        assert_eq!(
            second_best_accuracy(&preds, &refs).unwrap(),
            second_best_accuracy(&rescaled, &refs).unwrap()
        );
    }
}
