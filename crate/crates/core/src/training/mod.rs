//! Training: fold splitting, the mini-batch loop, fine-tuning, learning-rate
//! grid search, and cross-validated runs.

mod model;

pub use model::{OptimizerKind, ReferenceModel, DEFAULT_HIDDEN, REFERENCE_BACKEND_KIND};

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::ClassifierBackend;
use crate::bench::SoftLabelDataset;
use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::metrics::{
    aggregate_reports, evaluate_predictions, mean_cross_entropy, AggregateReport, EvalOptions,
    EvalReport,
};
use crate::scalar::Scalar;
use crate::seeding::{derive_rng, derive_seed, stream};
use crate::targets::{build_provider, TargetPolicy, TargetProvider};

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub policy: TargetPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.1,
            batch_size: 128,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            policy: TargetPolicy::OneHot,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        self.policy.validate()
    }
}

/// Assignment of examples to folds. Folds partition the index set and their
/// sizes differ by at most one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    k: usize,
    assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn fold_of(&self, example: usize) -> usize {
        self.assignments[example]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn holdout_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

/// Seeded permutation followed by contiguous chunking; the first `n mod k`
/// folds receive one extra example.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::config(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::config(format!("fold count {k} exceeds example count {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, &[stream::FOLD_SPLIT]));
    let base = n / k;
    let remainder = n % k;
    let mut assignments = vec![0usize; n];
    let mut cursor = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < remainder);
        for &example in &order[cursor..cursor + size] {
            assignments[example] = fold;
        }
        cursor += size;
    }
    Ok(FoldSplit { k, assignments })
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

impl TrainHistory {
    /// Delimited text: `epoch,loss` with full-precision losses.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "epoch,loss")?;
        for (epoch, loss) in self.epoch_loss.iter().enumerate() {
            writeln!(writer, "{epoch},{loss:.17e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::data("empty history file"))??;
        if header != "epoch,loss" {
            return Err(Error::data(format!("unrecognized history header: {header}")));
        }
        let mut epoch_loss = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = idx as u64 + 2;
            let (epoch, loss) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(lineno, "expected 'epoch,loss'"))?;
            let epoch: usize = epoch
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad epoch '{epoch}'")))?;
            if epoch != epoch_loss.len() {
                return Err(Error::parse(lineno, format!("epoch {epoch} out of order")));
            }
            epoch_loss.push(
                loss.parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("bad loss '{loss}'")))?,
            );
        }
        Ok(Self { epoch_loss })
    }
}

/// Mini-batch cross-entropy minimization for `config.epochs` epochs.
///
/// The provider supplies that epoch's features and targets (constant for
/// eager policies, redrawn for sampled-hard and mixup). Bitwise
/// deterministic given `(seed, data, config)`; aborts with the epoch and
/// batch location if the loss goes non-finite.
pub fn train<S: Scalar, B: ClassifierBackend<S> + ?Sized>(
    backend: &mut B,
    provider: &dyn TargetProvider<S>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    let n = provider.len();
    if n == 0 {
        return Err(Error::data("cannot train on an empty dataset"));
    }
    let lr = S::cast(config.learning_rate);
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let data = provider.epoch_data(epoch)?;
        let features = data.features.as_ref();
        let targets: &[LabelDistribution<S>] = data.targets.as_ref();
        if features.nrows() != n || targets.len() != n {
            return Err(Error::data(format!(
                "provider returned {} rows / {} targets for {n} examples at epoch {epoch}",
                features.nrows(),
                targets.len()
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(config.seed, &[stream::EPOCH_SHUFFLE, epoch as u64]));

        let mut total = 0.0f64;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_features = features.select(Axis(0), batch);
            let batch_targets: Vec<LabelDistribution<S>> =
                match provider.step_targets(epoch, step, batch) {
                    Some(resampled) => resampled?,
                    None => batch.iter().map(|&i| targets[i].clone()).collect(),
                };
            let loss = backend.fit_step(batch_features.view(), &batch_targets, lr)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {step}"
                )));
            }
            total += loss.as_f64() * batch.len() as f64;
        }
        epoch_loss.push(total / n as f64);
    }
    Ok(TrainHistory { epoch_loss })
}

/// Same loop as [`train`], started from a pretrained model's parameters with
/// fresh optimizer state. The pretrained model is left untouched.
pub fn fine_tune<S: Scalar, B: ClassifierBackend<S> + Clone>(
    pretrained: &B,
    provider: &dyn TargetProvider<S>,
    config: &TrainConfig,
) -> Result<(B, TrainHistory)> {
    let mut model = pretrained.clone();
    let snapshot = pretrained.snapshot();
    model.restore(&snapshot)?;
    let history = train(&mut model, provider, config)?;
    Ok((model, history))
}

/// Grid-search outcome: every candidate's validation cross-entropy, with
/// `None` marking divergence.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchOutcome {
    pub best_rate: f64,
    pub results: Vec<(f64, Option<f64>)>,
}

/// Train one model per candidate learning rate and pick the one with the
/// lowest validation cross-entropy. Ties go to the larger rate.
pub fn grid_search_lr<S: Scalar, B: ClassifierBackend<S>>(
    factory: impl Fn() -> B,
    provider: &dyn TargetProvider<S>,
    validation_features: ndarray::ArrayView2<'_, S>,
    validation_targets: &[LabelDistribution<S>],
    candidate_rates: &[f64],
    config: &TrainConfig,
) -> Result<GridSearchOutcome> {
    if candidate_rates.is_empty() {
        return Err(Error::config("grid search needs at least one candidate rate"));
    }
    let mut results = Vec::with_capacity(candidate_rates.len());
    for &rate in candidate_rates {
        let mut candidate_config = config.clone();
        candidate_config.learning_rate = rate;
        let mut model = factory();
        let ce = match train(&mut model, provider, &candidate_config) {
            Err(Error::Numeric(_)) => None,
            Err(other) => return Err(other),
            Ok(_) => {
                let preds = model.predict_proba(validation_features)?;
                let ce = mean_cross_entropy(&preds, validation_targets)?.as_f64();
                ce.is_finite().then_some(ce)
            }
        };
        results.push((rate, ce));
    }
    let mut best: Option<(f64, f64)> = None;
    for &(rate, ce) in &results {
        if let Some(ce) = ce {
            best = match best {
                None => Some((rate, ce)),
                Some((b_rate, b_ce)) => {
                    if ce < b_ce || (ce == b_ce && rate > b_rate) {
                        Some((rate, ce))
                    } else {
                        Some((b_rate, b_ce))
                    }
                }
            };
        }
    }
    let Some((best_rate, _)) = best else {
        let rates: Vec<String> = candidate_rates.iter().map(|r| r.to_string()).collect();
        return Err(Error::numeric(format!(
            "all candidate learning rates diverged: {}",
            rates.join(", ")
        )));
    };
    Ok(GridSearchOutcome { best_rate, results })
}

/// One completed fold of a cross-validated run.
pub struct FoldRun<S: Scalar, B> {
    pub fold: usize,
    pub seed: u64,
    pub model: B,
    pub history: TrainHistory,
    pub holdout_indices: Vec<usize>,
    pub predictions: Vec<LabelDistribution<S>>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

pub struct CrossValOutcome<S: Scalar, B> {
    pub folds: Vec<FoldRun<S, B>>,
    pub failures: Vec<FoldFailure>,
    pub aggregate: AggregateReport,
}

/// Train `k` models on their training folds and evaluate each on its holdout
/// fold. Folds run in parallel; per-fold seeds are derived from
/// `(config.seed, fold)`, so parallel and serial execution agree. A failing
/// fold is recorded and the others proceed.
pub fn cross_validated_run<S, B>(
    factory: impl Fn(usize, u64) -> Result<B> + Sync,
    dataset: &SoftLabelDataset<S>,
    policy: &TargetPolicy,
    config: &TrainConfig,
    k: usize,
    distill_sources: &[Box<dyn ClassifierBackend<S>>],
    eval_options: &EvalOptions,
) -> Result<CrossValOutcome<S, B>>
where
    S: Scalar,
    B: ClassifierBackend<S>,
{
    dataset.validate()?;
    config.validate()?;
    if policy.requires_soft_labels() && dataset.soft_labels.is_none() {
        return Err(Error::data(format!(
            "policy '{}' requires a dataset with soft labels",
            policy.label()
        )));
    }
    let split = kfold_split(dataset.len(), k, config.seed)?;
    let runs: Vec<Result<FoldRun<S, B>>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            train_single_fold(
                &factory,
                dataset,
                policy,
                config,
                &split,
                fold,
                distill_sources,
                eval_options,
            )
        })
        .collect();

    let mut folds = Vec::new();
    let mut failures = Vec::new();
    for (fold, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => folds.push(run),
            Err(e) => failures.push(FoldFailure { fold, error: e.to_string() }),
        }
    }
    if folds.is_empty() {
        return Err(Error::data(format!(
            "all {k} folds failed; first error: {}",
            failures.first().map(|f| f.error.as_str()).unwrap_or("unknown")
        )));
    }
    let aggregate = aggregate_reports(folds.iter().map(|f| &f.report))?;
    Ok(CrossValOutcome { folds, failures, aggregate })
}

/// Train and evaluate one fold of a cross-validated run. The per-fold seed
/// is derived from `(config.seed, fold)`.
#[allow(clippy::too_many_arguments)]
pub fn train_single_fold<S, B>(
    factory: &(impl Fn(usize, u64) -> Result<B> + Sync),
    dataset: &SoftLabelDataset<S>,
    policy: &TargetPolicy,
    config: &TrainConfig,
    split: &FoldSplit,
    fold: usize,
    distill_sources: &[Box<dyn ClassifierBackend<S>>],
    eval_options: &EvalOptions,
) -> Result<FoldRun<S, B>>
where
    S: Scalar,
    B: ClassifierBackend<S>,
{
    let fold_seed = derive_seed(config.seed, &[stream::FOLD_SEED, fold as u64]);
    let train_indices = split.train_indices(fold);
    let holdout_indices = split.holdout_indices(fold);

    let train_features = dataset.features.select(Axis(0), &train_indices);
    let train_hard: Vec<usize> = train_indices.iter().map(|&i| dataset.hard_labels[i]).collect();
    let train_soft: Option<Vec<LabelDistribution<S>>> = dataset
        .soft_labels
        .as_ref()
        .map(|soft| train_indices.iter().map(|&i| soft[i].clone()).collect());

    let provider = build_provider(
        policy,
        train_features,
        &train_hard,
        train_soft.as_deref(),
        dataset.n_classes,
        fold_seed,
        distill_sources,
    )?;
    let mut fold_config = config.clone();
    fold_config.seed = fold_seed;
    let mut model = factory(fold, fold_seed)?;
    let history = train(&mut model, provider.as_ref(), &fold_config)?;

    let holdout_features = dataset.features.select(Axis(0), &holdout_indices);
    let holdout_hard: Vec<usize> =
        holdout_indices.iter().map(|&i| dataset.hard_labels[i]).collect();
    let holdout_soft: Option<Vec<LabelDistribution<S>>> = dataset
        .soft_labels
        .as_ref()
        .map(|soft| holdout_indices.iter().map(|&i| soft[i].clone()).collect());
    let predictions = model.predict_proba(holdout_features.view())?;
    let report = evaluate_predictions(
        &predictions,
        &holdout_hard,
        holdout_soft.as_deref(),
        "holdout",
        eval_options,
    )?;
    Ok(FoldRun {
        fold,
        seed: fold_seed,
        model,
        history,
        holdout_indices,
        predictions,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Provenance;
    use crate::targets::FixedTargetProvider;
    use ndarray::{Array2, ArrayView2};
    use rand::Rng;

    #[test]
    fn kfold_partitions_with_balanced_sizes() {
        let split = kfold_split(10_000, 10, 3).unwrap();
        for fold in 0..10 {
            assert_eq!(split.holdout_indices(fold).len(), 1_000);
            assert_eq!(split.train_indices(fold).len(), 9_000);
        }
        // Union of holdouts is the full index set, pairwise disjoint.
        let mut seen = vec![false; 10_000];
        for fold in 0..10 {
            for i in split.holdout_indices(fold) {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn kfold_uneven_sizes_differ_by_at_most_one() {
        let split = kfold_split(103, 5, 0).unwrap();
        let sizes: Vec<usize> = (0..5).map(|f| split.holdout_indices(f).len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn kfold_singletons_and_errors() {
        let split = kfold_split(10, 10, 0).unwrap();
        for fold in 0..10 {
            assert_eq!(split.holdout_indices(fold).len(), 1);
        }
        assert!(kfold_split(5, 6, 0).is_err());
        assert!(kfold_split(5, 1, 0).is_err());
    }

    #[test]
    fn kfold_is_seed_deterministic() {
        assert_eq!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 9).unwrap());
        assert_ne!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 10).unwrap());
    }

    fn toy_separable(n: usize) -> (Array2<f64>, Vec<usize>) {
        // Two linearly separable blobs in 2-D.
        let mut rng = derive_rng(1234, &[55]);
        let mut features = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let (cx, cy) = if class == 0 { (0.2, 0.2) } else { (0.8, 0.8) };
            features[(i, 0)] = (cx + 0.1 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
            features[(i, 1)] = (cy + 0.1 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
            labels.push(class);
        }
        (features, labels)
    }

    fn provider_for(
        features: Array2<f64>,
        labels: &[usize],
        k: usize,
    ) -> FixedTargetProvider<f64> {
        let targets = crate::targets::one_hot_targets(labels, k).unwrap();
        FixedTargetProvider::new(features, targets).unwrap()
    }

    #[test]
    fn separable_toy_problem_converges() {
        let (features, labels) = toy_separable(64);
        let provider = provider_for(features, &labels, 2);
        let mut model = ReferenceModel::<f64>::new(2, 16, 2, 0, OptimizerKind::Adam).unwrap();
        let config = TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            batch_size: 16,
            seed: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &provider, &config).unwrap();
        assert_eq!(history.epoch_loss.len(), 200);
        assert!(
            *history.epoch_loss.last().unwrap() < 0.05,
            "final loss {}",
            history.epoch_loss.last().unwrap()
        );
    }

    #[test]
    fn zero_epochs_leave_the_model_untouched() {
        let (features, labels) = toy_separable(16);
        let provider = provider_for(features, &labels, 2);
        let mut model = ReferenceModel::<f64>::new(2, 8, 2, 0, OptimizerKind::Adam).unwrap();
        let before = model.snapshot();
        let config = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let history = train(&mut model, &provider, &config).unwrap();
        assert!(history.epoch_loss.is_empty());
        assert_eq!(model.snapshot(), before);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (features, labels) = toy_separable(48);
        let config = TrainConfig {
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 8,
            seed: 77,
            ..TrainConfig::default()
        };
        let run = || {
            let provider = provider_for(features.clone(), &labels, 2);
            let mut model =
                ReferenceModel::<f64>::new(2, 8, 2, 42, OptimizerKind::Adam).unwrap();
            let history = train(&mut model, &provider, &config).unwrap();
            (history, model.snapshot())
        };
        let (h1, s1) = run();
        let (h2, s2) = run();
        assert_eq!(h1, h2);
        assert_eq!(s1, s2);
        assert_eq!(
            h1.epoch_loss.iter().map(|l| l.to_bits()).collect::<Vec<_>>(),
            h2.epoch_loss.iter().map(|l| l.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn history_csv_round_trips() {
        let history = TrainHistory { epoch_loss: vec![0.5, 0.25, 0.125000001] };
        let mut buf = Vec::new();
        history.write_csv(&mut buf).unwrap();
        assert_eq!(TrainHistory::read_csv(buf.as_slice()).unwrap(), history);
    }

    #[test]
    fn fine_tune_zero_epochs_equals_pretrained() {
        let (features, labels) = toy_separable(16);
        let provider = provider_for(features.clone(), &labels, 2);
        let mut pretrained =
            ReferenceModel::<f64>::new(2, 8, 2, 5, OptimizerKind::Adam).unwrap();
        let config =
            TrainConfig { epochs: 3, learning_rate: 0.05, batch_size: 8, ..TrainConfig::default() };
        train(&mut pretrained, &provider, &config).unwrap();

        let zero = TrainConfig { epochs: 0, ..config.clone() };
        let provider2 = provider_for(features.clone(), &labels, 2);
        let (tuned, history) = fine_tune(&pretrained, &provider2, &zero).unwrap();
        assert!(history.epoch_loss.is_empty());
        assert_eq!(tuned.snapshot(), pretrained.snapshot());

        // A real fine-tune moves the parameters but never the original.
        let before = pretrained.snapshot();
        let provider3 = provider_for(features, &labels, 2);
        let (tuned, _) = fine_tune(&pretrained, &provider3, &config).unwrap();
        assert_ne!(tuned.snapshot(), before);
        assert_eq!(pretrained.snapshot(), before);
    }

    /// Stub whose validation CE is a function of the learning rate it saw.
    #[derive(Clone)]
    struct RateProbe {
        rate: f64,
    }

    impl ClassifierBackend<f64> for RateProbe {
        fn input_dim(&self) -> usize {
            1
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn predict_proba(
            &self,
            features: ArrayView2<'_, f64>,
        ) -> Result<Vec<LabelDistribution<f64>>> {
            // CE against class-0 targets is -ln(p0); make p0 peak at
            // rate = 0.01.
            let p0 = (0.9 - (self.rate - 0.01).abs()).clamp(0.05, 0.95);
            Ok(vec![
                LabelDistribution::new(vec![p0, 1.0 - p0], 0).unwrap();
                features.nrows()
            ])
        }
        fn loss_input_gradient(
            &self,
            _: ArrayView2<'_, f64>,
            _: &[LabelDistribution<f64>],
        ) -> Result<Array2<f64>> {
            unimplemented!()
        }
        fn fit_step(
            &mut self,
            _: ArrayView2<'_, f64>,
            _: &[LabelDistribution<f64>],
            learning_rate: f64,
        ) -> Result<f64> {
            self.rate = learning_rate;
            if learning_rate > 1.0 {
                return Ok(f64::NAN);
            }
            Ok(0.5)
        }
        fn snapshot(&self) -> crate::backend::ParamSnapshot<f64> {
            crate::backend::ParamSnapshot {
                backend_kind: "rate-probe".into(),
                dims: vec![],
                values: vec![self.rate],
                config_digest: String::new(),
            }
        }
        fn restore(&mut self, snapshot: &crate::backend::ParamSnapshot<f64>) -> Result<()> {
            self.rate = snapshot.values[0];
            Ok(())
        }
    }

    #[test]
    fn grid_search_recovers_the_rate_an_oracle_prefers() {
        let features = Array2::from_shape_vec((4, 1), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let provider = provider_for(features.clone(), &[0, 0, 0, 0], 2);
        let targets = crate::targets::one_hot_targets::<f64>(&[0, 0, 0, 0], 2).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let outcome = grid_search_lr(
            || RateProbe { rate: 0.0 },
            &provider,
            features.view(),
            &targets,
            &[0.2, 0.1, 0.01, 0.001],
            &config,
        )
        .unwrap();
        assert_eq!(outcome.best_rate, 0.01);
        assert_eq!(outcome.results.len(), 4);

        // Single candidate comes straight back.
        let single = grid_search_lr(
            || RateProbe { rate: 0.0 },
            &provider,
            features.view(),
            &targets,
            &[0.1],
            &config,
        )
        .unwrap();
        assert_eq!(single.best_rate, 0.1);

        // Divergent rates are reported, and all-divergent is an error.
        let err = grid_search_lr(
            || RateProbe { rate: 0.0 },
            &provider,
            features.view(),
            &targets,
            &[2.0, 3.0],
            &config,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains('2') && err.to_string().contains('3'));
    }

    fn toy_dataset(n: usize) -> SoftLabelDataset<f64> {
        let (features, hard_labels) = toy_separable(n);
        let soft = hard_labels
            .iter()
            .map(|&y| {
                let mut p = vec![0.15, 0.15];
                p[y] = 0.85;
                LabelDistribution::new(p, 0).unwrap()
            })
            .collect();
        SoftLabelDataset {
            name: "toy".into(),
            features,
            hard_labels,
            soft_labels: Some(soft),
            n_classes: 2,
            provenance: Provenance::Synthetic,
            shift_level: None,
        }
    }

    #[test]
    fn cross_validated_run_evaluates_only_holdouts() {
        let dataset = toy_dataset(40);
        let config = TrainConfig {
            epochs: 5,
            learning_rate: 0.02,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let outcome = cross_validated_run(
            |_, seed| ReferenceModel::<f64>::new(2, 8, 2, seed, OptimizerKind::Adam),
            &dataset,
            &TargetPolicy::OneHot,
            &config,
            2,
            &[],
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(outcome.folds.len(), 2);
        assert!(outcome.failures.is_empty());

        // Index audit: the two holdout sets partition the dataset.
        let mut seen = vec![false; 40];
        for fold in &outcome.folds {
            assert_eq!(fold.predictions.len(), fold.holdout_indices.len());
            for &i in &fold.holdout_indices {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));

        // Aggregate is the arithmetic mean of the fold reports.
        let mean_ce = outcome.folds.iter().map(|f| f.report.crossentropy_vs_hard).sum::<f64>()
            / outcome.folds.len() as f64;
        assert!((outcome.aggregate.crossentropy_vs_hard.mean - mean_ce).abs() < 1e-15);
    }

    #[test]
    fn cross_validated_run_is_deterministic() {
        let dataset = toy_dataset(30);
        let config = TrainConfig {
            epochs: 3,
            learning_rate: 0.02,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = || {
            cross_validated_run(
                |_, seed| ReferenceModel::<f64>::new(2, 8, 2, seed, OptimizerKind::Adam),
                &dataset,
                &TargetPolicy::HumanSoft,
                &config,
                3,
                &[],
                &EvalOptions::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (fa, fb) in a.folds.iter().zip(&b.folds) {
            assert_eq!(fa.report, fb.report);
            assert_eq!(fa.predictions, fb.predictions);
            assert_eq!(fa.model.snapshot(), fb.model.snapshot());
        }
    }

    #[test]
    fn failing_folds_are_isolated() {
        let dataset = toy_dataset(30);
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 0.02,
            batch_size: 8,
            seed: 2,
            ..TrainConfig::default()
        };
        let outcome = cross_validated_run(
            |fold, seed| {
                if fold == 1 {
                    Err(Error::numeric("injected fold failure"))
                } else {
                    ReferenceModel::<f64>::new(2, 8, 2, seed, OptimizerKind::Adam)
                }
            },
            &dataset,
            &TargetPolicy::OneHot,
            &config,
            3,
            &[],
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(outcome.folds.len(), 2);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].fold, 1);
        assert!(outcome.failures[0].error.contains("injected"));
    }

    #[test]
    fn policies_needing_soft_labels_are_rejected_without_them() {
        let mut dataset = toy_dataset(20);
        dataset.soft_labels = None;
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let err = cross_validated_run(
            |_, seed| ReferenceModel::<f64>::new(2, 8, 2, seed, OptimizerKind::Adam),
            &dataset,
            &TargetPolicy::HumanSoft,
            &config,
            2,
            &[],
            &EvalOptions::default(),
        )
        .err()
        .unwrap();
        assert!(err.to_string().contains("soft labels"));
    }
}
