//! Experiment orchestration and results persistence.
//!
//! An experiment is described by a config file and identified by a content
//! digest of that config (excluding the output directory). Results live
//! under `out_dir/<digest>/` with one directory per policy and one per
//! fold, so every aggregate in a report is recomputable from persisted
//! fold-level artifacts. Phases are idempotent: finished folds are detected
//! by their artifacts and skipped, which makes interrupted runs resumable.

use std::fs;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{robustness_eval, AttackConfig, AttackMethod};
use crate::backend::{load_snapshot, save_snapshot, ClassifierBackend};
use crate::bench::{load_dataset, DatasetSpec, SoftLabelDataset, SynthWorld, SynthWorldConfig};
use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::scalar::Scalar;
use crate::training::{
    kfold_split, train_single_fold, OptimizerKind, ReferenceModel, TrainConfig, DEFAULT_HIDDEN,
};

/// Training hyperparameters shared by every policy in the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Hidden width of the reference model.
    pub hidden: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.1,
            batch_size: 128,
            optimizer: OptimizerKind::Adam,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

/// Where the experiment's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Generated world with Bayes-oracle soft labels and shifted test sets.
    Synthetic { synth: SynthWorldConfig },
    /// Pre-extracted files.
    Files {
        n_classes: usize,
        train: DatasetSpec,
        #[serde(default)]
        tests: Vec<DatasetSpec>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic { synth: SynthWorldConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub k_folds: usize,
    pub out_dir: PathBuf,
    pub dataset: DatasetSource,
    pub policies: Vec<crate::targets::TargetPolicy>,
    pub train: TrainSettings,
    pub attacks: Vec<AttackConfig>,
    pub eval: EvalOptions,
    /// At most this many holdout examples feed each attack.
    pub attack_sample: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            k_folds: 5,
            out_dir: PathBuf::from("runs"),
            dataset: DatasetSource::default(),
            policies: vec![
                crate::targets::TargetPolicy::OneHot,
                crate::targets::TargetPolicy::HumanSoft,
            ],
            train: TrainSettings::default(),
            attacks: Vec::new(),
            eval: EvalOptions::default(),
            attack_sample: 500,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::config("experiment needs at least one policy"));
        }
        if self.k_folds < 2 {
            return Err(Error::config("k_folds must be at least 2"));
        }
        if self.attack_sample == 0 {
            return Err(Error::config("attack_sample must be positive"));
        }
        let mut labels = std::collections::BTreeSet::new();
        for policy in &self.policies {
            policy.validate()?;
            if !labels.insert(policy.label()) {
                return Err(Error::config(format!("duplicate policy '{}'", policy.label())));
            }
            if let crate::targets::TargetPolicy::Distill { sources, .. } = policy {
                if sources.is_empty() {
                    return Err(Error::config(
                        "distill policy needs at least one source model path",
                    ));
                }
            }
        }
        for attack in &self.attacks {
            attack.validate()?;
        }
        self.train_config(&self.policies[0]).validate()?;
        Ok(())
    }

    pub fn train_config(&self, policy: &crate::targets::TargetPolicy) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer,
            seed: self.seed,
            policy: policy.clone(),
        }
    }

    /// Content digest over the canonical serialization, excluding the
    /// output directory so relocating results keeps the identity.
    pub fn digest(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let text = canonical.to_toml()?;
        let hash = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &hash[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        Ok(hex)
    }
}

/// The experiment's materialized data: one training set and the evaluation
/// sets.
pub struct ExperimentData {
    pub train: SoftLabelDataset<f64>,
    pub tests: Vec<SoftLabelDataset<f64>>,
    pub n_classes: usize,
}

/// Build the datasets a config describes. Deterministic, so separate phases
/// (and separate processes) see identical data.
pub fn materialize(config: &ExperimentConfig) -> Result<ExperimentData> {
    match &config.dataset {
        DatasetSource::Synthetic { synth } => {
            let world = SynthWorld::new(synth.clone())?;
            let (train, tests) = world.make::<f64>()?;
            Ok(ExperimentData { n_classes: synth.n_classes, train, tests })
        }
        DatasetSource::Files { n_classes, train, tests } => {
            let train = load_dataset::<f64>(train, *n_classes)?.dataset;
            let tests = tests
                .iter()
                .map(|spec| Ok(load_dataset::<f64>(spec, *n_classes)?.dataset))
                .collect::<Result<Vec<_>>>()?;
            Ok(ExperimentData { train, tests, n_classes: *n_classes })
        }
    }
}

const COMPLETE_MARKER: &str = "COMPLETE";

/// Handle to one experiment's on-disk results.
pub struct ResultsStore {
    root: PathBuf,
    config: ExperimentConfig,
    digest: String,
}

impl ResultsStore {
    /// Create (or reopen) the store for a config. A completed experiment
    /// refuses to reopen unless `overwrite` is set, in which case its
    /// directory is wiped.
    pub fn open(config: &ExperimentConfig, overwrite: bool) -> Result<Self> {
        config.validate()?;
        let digest = config.digest()?;
        let root = config.out_dir.join(&digest);
        if root.join(COMPLETE_MARKER).exists() {
            if !overwrite {
                return Err(Error::data(format!(
                    "experiment {digest} already complete at {}; pass overwrite to redo",
                    root.display()
                )));
            }
            fs::remove_dir_all(&root)?;
        }
        fs::create_dir_all(&root)?;
        fs::write(root.join("config.toml"), config.to_toml()?)?;
        Ok(Self { root, config: config.clone(), digest })
    }

    /// Reopen a store that a training run already created. Never wipes and
    /// never refuses a completed experiment (report emission needs both).
    pub fn open_existing(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let digest = config.digest()?;
        let root = config.out_dir.join(&digest);
        if !root.join("config.toml").exists() {
            return Err(Error::data(format!(
                "no results store for digest {digest} under {}; run training first",
                config.out_dir.display()
            )));
        }
        Ok(Self { root, config: config.clone(), digest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn is_complete(&self) -> bool {
        self.root.join(COMPLETE_MARKER).exists()
    }

    pub fn policy_dir(&self, policy: &crate::targets::TargetPolicy) -> PathBuf {
        self.root.join("policies").join(policy.label())
    }

    pub fn fold_dir(&self, policy: &crate::targets::TargetPolicy, fold: usize) -> PathBuf {
        self.policy_dir(policy).join(format!("fold_{fold:02}"))
    }

    pub fn eval_path(
        &self,
        policy: &crate::targets::TargetPolicy,
        dataset: &str,
        fold: usize,
    ) -> PathBuf {
        self.policy_dir(policy).join("evals").join(dataset).join(format!("fold_{fold:02}.txt"))
    }

    pub fn attack_dir(
        &self,
        policy: &crate::targets::TargetPolicy,
        attack: &AttackConfig,
    ) -> PathBuf {
        self.policy_dir(policy).join("attacks").join(attack.label())
    }

    fn fold_is_trained(&self, policy: &crate::targets::TargetPolicy, fold: usize) -> bool {
        let dir = self.fold_dir(policy, fold);
        dir.join("holdout_report.txt").exists() && dir.join("model.bin").exists()
    }

    fn fold_failed(&self, policy: &crate::targets::TargetPolicy, fold: usize) -> bool {
        self.fold_dir(policy, fold).join("error.txt").exists()
    }

    /// Load one fold's persisted model.
    pub fn load_model(
        &self,
        policy: &crate::targets::TargetPolicy,
        fold: usize,
    ) -> Result<ReferenceModel<f64>> {
        let path = self.fold_dir(policy, fold).join("model.bin");
        let snapshot = load_snapshot::<f64>(&path)?;
        if snapshot.config_digest != self.digest {
            return Err(Error::data(format!(
                "model {} was trained under digest {}, store digest is {}",
                path.display(),
                snapshot.config_digest,
                self.digest
            )));
        }
        ReferenceModel::from_snapshot(&snapshot, self.config.train.optimizer)
    }

    fn maybe_mark_complete(&self, data: &ExperimentData) -> Result<()> {
        for policy in &self.config.policies {
            for fold in 0..self.config.k_folds {
                let trained = self.fold_is_trained(policy, fold);
                let failed = self.fold_failed(policy, fold);
                if !trained && !failed {
                    return Ok(());
                }
                if failed {
                    continue;
                }
                for test in &data.tests {
                    if !self.eval_path(policy, &test.name, fold).exists() {
                        return Ok(());
                    }
                }
                for attack in &self.config.attacks {
                    if !self.attack_dir(policy, attack).join(format!("fold_{fold:02}.txt")).exists()
                    {
                        return Ok(());
                    }
                }
            }
        }
        fs::write(self.root.join(COMPLETE_MARKER), format!("{}\n", self.digest))?;
        Ok(())
    }
}

fn write_predictions_csv<S: Scalar, W: Write>(
    mut writer: W,
    indices: &[usize],
    labels: &[usize],
    predictions: &[LabelDistribution<S>],
) -> Result<()> {
    let Some(first) = predictions.first() else {
        return Err(Error::data("no predictions to persist"));
    };
    write!(writer, "example_index,label")?;
    for c in 0..first.k() {
        write!(writer, ",p{c}")?;
    }
    writeln!(writer)?;
    for ((&index, &label), pred) in indices.iter().zip(labels).zip(predictions) {
        write!(writer, "{index},{label}")?;
        for &p in pred.probs() {
            write!(writer, ",{:.17e}", p)?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Read back a persisted prediction matrix.
pub fn read_predictions_csv<S: Scalar>(
    path: &Path,
) -> Result<(Vec<usize>, Vec<usize>, Vec<LabelDistribution<S>>)> {
    use std::io::BufRead;
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| Error::data("empty predictions file"))??;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "example_index" || columns[1] != "label" {
        return Err(Error::data(format!("unrecognized predictions header: {header}")));
    }
    let k = columns.len() - 2;
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    let mut predictions = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx as u64 + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 2 {
            return Err(Error::parse(lineno, "wrong field count"));
        }
        indices.push(
            fields[0].parse().map_err(|_| Error::parse(lineno, "bad example index"))?,
        );
        labels.push(fields[1].parse().map_err(|_| Error::parse(lineno, "bad label"))?);
        let probs = fields[2..]
            .iter()
            .map(|raw| {
                raw.parse::<f64>()
                    .map(S::cast)
                    .map_err(|_| Error::parse(lineno, format!("bad probability '{raw}'")))
            })
            .collect::<Result<Vec<S>>>()?;
        predictions
            .push(LabelDistribution::new(probs, 0).map_err(|e| Error::parse(lineno, e.to_string()))?);
    }
    Ok((indices, labels, predictions))
}

fn resolve_distill_sources(
    policy: &crate::targets::TargetPolicy,
    optimizer: OptimizerKind,
) -> Result<Vec<Box<dyn ClassifierBackend<f64>>>> {
    let crate::targets::TargetPolicy::Distill { sources, .. } = policy else {
        return Ok(Vec::new());
    };
    sources
        .iter()
        .map(|path| {
            let snapshot = load_snapshot::<f64>(path)?;
            let model = ReferenceModel::from_snapshot(&snapshot, optimizer)?;
            Ok(Box::new(model) as Box<dyn ClassifierBackend<f64>>)
        })
        .collect()
}

/// Train every (policy, fold) pair that is not already persisted. A failing
/// fold writes `error.txt` and the rest proceed.
pub fn run_training(store: &ResultsStore, data: &ExperimentData) -> Result<()> {
    let config = store.config();
    data.train.validate()?;
    let split = kfold_split(data.train.len(), config.k_folds, config.seed)?;
    let input_dim = data.train.features.ncols();
    for policy in &config.policies {
        let sources = resolve_distill_sources(policy, config.train.optimizer)?;
        let train_config = config.train_config(policy);
        let pending: Vec<usize> = (0..config.k_folds)
            .filter(|&fold| !store.fold_is_trained(policy, fold) && !store.fold_failed(policy, fold))
            .collect();
        let digest = store.digest().to_string();
        let runs: Vec<(usize, Result<()>)> = pending
            .par_iter()
            .map(|&fold| {
                let result = train_single_fold(
                    &|_, fold_seed| {
                        let mut model = ReferenceModel::<f64>::new(
                            input_dim,
                            config.train.hidden,
                            data.n_classes,
                            fold_seed,
                            config.train.optimizer,
                        )?;
                        model.set_config_digest(digest.clone());
                        Ok(model)
                    },
                    &data.train,
                    policy,
                    &train_config,
                    &split,
                    fold,
                    &sources,
                    &config.eval,
                )
                .and_then(|run| {
                    let dir = store.fold_dir(policy, fold);
                    fs::create_dir_all(&dir)?;
                    save_snapshot(&dir.join("model.bin"), &run.model.snapshot())?;
                    run.history.write_csv(BufWriter::new(File::create(dir.join("history.csv"))?))?;
                    let holdout_labels: Vec<usize> = run
                        .holdout_indices
                        .iter()
                        .map(|&i| data.train.hard_labels[i])
                        .collect();
                    write_predictions_csv(
                        BufWriter::new(File::create(dir.join("holdout_predictions.csv"))?),
                        &run.holdout_indices,
                        &holdout_labels,
                        &run.predictions,
                    )?;
                    run.report.write_key_value(BufWriter::new(File::create(
                        dir.join("holdout_report.txt"),
                    )?))?;
                    Ok(())
                });
                (fold, result)
            })
            .collect();
        for (fold, result) in runs {
            if let Err(e) = result {
                let dir = store.fold_dir(policy, fold);
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("error.txt"), format!("{e}\n"))?;
            }
        }
    }
    store.maybe_mark_complete(data)
}

/// Evaluate every trained fold model on every test dataset.
pub fn run_evaluation(store: &ResultsStore, data: &ExperimentData) -> Result<()> {
    let config = store.config();
    for policy in &config.policies {
        for fold in 0..config.k_folds {
            if !store.fold_is_trained(policy, fold) {
                continue;
            }
            let needed: Vec<&SoftLabelDataset<f64>> = data
                .tests
                .iter()
                .filter(|ds| !store.eval_path(policy, &ds.name, fold).exists())
                .collect();
            if needed.is_empty() {
                continue;
            }
            let model = store.load_model(policy, fold)?;
            for dataset in needed {
                let report = evaluate(
                    &model,
                    dataset.features.view(),
                    &dataset.hard_labels,
                    dataset.soft_labels.as_deref(),
                    &dataset.name,
                    &config.eval,
                )?;
                let path = store.eval_path(policy, &dataset.name, fold);
                fs::create_dir_all(path.parent().expect("eval path has parent"))?;
                report.write_key_value(BufWriter::new(File::create(path)?))?;
            }
        }
    }
    store.maybe_mark_complete(data)
}

/// Attack every trained fold model on (a sample of) its holdout fold.
pub fn run_attacks(store: &ResultsStore, data: &ExperimentData) -> Result<()> {
    let config = store.config();
    if config.attacks.is_empty() {
        return store.maybe_mark_complete(data);
    }
    let split = kfold_split(data.train.len(), config.k_folds, config.seed)?;
    for policy in &config.policies {
        for fold in 0..config.k_folds {
            if !store.fold_is_trained(policy, fold) {
                continue;
            }
            let pending: Vec<&AttackConfig> = config
                .attacks
                .iter()
                .filter(|a| {
                    !store.attack_dir(policy, a).join(format!("fold_{fold:02}.txt")).exists()
                })
                .collect();
            if pending.is_empty() {
                continue;
            }
            let model = store.load_model(policy, fold)?;
            let holdout = split.holdout_indices(fold);
            let sample: Vec<usize> =
                holdout.iter().copied().take(config.attack_sample).collect();
            let target = data.train.subset(&sample, "attack-sample");
            for attack in pending {
                let report = robustness_eval(&model, &target, attack)?;
                let dir = store.attack_dir(policy, attack);
                fs::create_dir_all(&dir)?;
                report.write_key_value(BufWriter::new(File::create(
                    dir.join(format!("fold_{fold:02}.txt")),
                )?))?;
                if attack.method == AttackMethod::Pgd {
                    if let Some(trace) = &report.trace {
                        trace.write_csv(BufWriter::new(File::create(
                            dir.join(format!("fold_{fold:02}_curve.csv")),
                        )?))?;
                    }
                }
            }
        }
    }
    store.maybe_mark_complete(data)
}

/// Open the store, run all phases, and mark the experiment complete.
pub fn run_experiment(config: &ExperimentConfig, overwrite: bool) -> Result<ResultsStore> {
    let store = ResultsStore::open(config, overwrite)?;
    let data = materialize(config)?;
    run_training(&store, &data)?;
    run_evaluation(&store, &data)?;
    run_attacks(&store, &data)?;
    store.maybe_mark_complete(&data)?;
    Ok(store)
}

/// Per-fold artifacts read back from disk for reporting.
pub struct StoredFoldReports {
    /// `(fold, report)` per dataset name; "holdout" holds the holdout
    /// reports.
    pub by_dataset: std::collections::BTreeMap<String, Vec<(usize, EvalReport)>>,
    pub failures: Vec<(usize, String)>,
}

/// Read every persisted fold report for one policy.
pub fn read_policy_reports(
    store: &ResultsStore,
    policy: &crate::targets::TargetPolicy,
) -> Result<StoredFoldReports> {
    let mut by_dataset: std::collections::BTreeMap<String, Vec<(usize, EvalReport)>> =
        std::collections::BTreeMap::new();
    let mut failures = Vec::new();
    for fold in 0..store.config().k_folds {
        let dir = store.fold_dir(policy, fold);
        let report_path = dir.join("holdout_report.txt");
        if report_path.exists() {
            let report = EvalReport::read_key_value(BufReader::new(File::open(&report_path)?))?;
            by_dataset.entry("holdout".to_string()).or_default().push((fold, report));
        } else if dir.join("error.txt").exists() {
            failures.push((fold, fs::read_to_string(dir.join("error.txt"))?.trim().to_string()));
        }
    }
    let evals_dir = store.policy_dir(policy).join("evals");
    if evals_dir.exists() {
        let mut datasets: Vec<PathBuf> = fs::read_dir(&evals_dir)?
            .map(|entry| Ok(entry?.path()))
            .collect::<Result<Vec<_>>>()?;
        datasets.sort();
        for dataset_dir in datasets {
            let name = dataset_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            for fold in 0..store.config().k_folds {
                let path = dataset_dir.join(format!("fold_{fold:02}.txt"));
                if path.exists() {
                    let report = EvalReport::read_key_value(BufReader::new(File::open(&path)?))?;
                    by_dataset.entry(name.clone()).or_default().push((fold, report));
                }
            }
        }
    }
    Ok(StoredFoldReports { by_dataset, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::TargetPolicy;

    fn small_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            name: "test-run".into(),
            seed: 7,
            k_folds: 2,
            out_dir: dir.to_path_buf(),
            dataset: DatasetSource::Synthetic {
                synth: SynthWorldConfig {
                    n_classes: 3,
                    n_dims: 6,
                    n_train: 60,
                    n_test: 30,
                    shift_levels: vec![0.0, 1.0],
                    seed: 7,
                    ..SynthWorldConfig::default()
                },
            },
            policies: vec![TargetPolicy::OneHot, TargetPolicy::HumanSoft],
            train: TrainSettings {
                epochs: 3,
                learning_rate: 0.05,
                batch_size: 16,
                hidden: 8,
                ..TrainSettings::default()
            },
            attacks: vec![AttackConfig::fgsm(4), AttackConfig::pgd(4, 3)],
            eval: EvalOptions::default(),
            attack_sample: 20,
        }
    }

    #[test]
    fn digest_ignores_out_dir_but_tracks_content() {
        let a = small_config(Path::new("x"));
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn config_toml_round_trips() {
        let config = small_config(Path::new("runs"));
        let text = config.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn full_run_persists_expected_layout() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let store = run_experiment(&config, false).unwrap();
        assert!(store.is_complete());

        for policy in &config.policies {
            for fold in 0..config.k_folds {
                let fold_dir = store.fold_dir(policy, fold);
                assert!(fold_dir.join("model.bin").exists());
                assert!(fold_dir.join("history.csv").exists());
                assert!(fold_dir.join("holdout_report.txt").exists());
                assert!(fold_dir.join("holdout_predictions.csv").exists());
                assert!(store.eval_path(policy, "shift-0", fold).exists());
                assert!(store.eval_path(policy, "shift-1", fold).exists());
                for attack in &config.attacks {
                    assert!(store
                        .attack_dir(policy, attack)
                        .join(format!("fold_{fold:02}.txt"))
                        .exists());
                }
            }
            let reports = read_policy_reports(&store, policy).unwrap();
            assert_eq!(reports.by_dataset["holdout"].len(), 2);
            assert_eq!(reports.by_dataset["shift-0"].len(), 2);
            assert!(reports.failures.is_empty());
        }
        // PGD traces persisted next to their reports.
        assert!(store
            .attack_dir(&config.policies[0], &config.attacks[1])
            .join("fold_00_curve.csv")
            .exists());
    }

    #[test]
    fn rerun_refuses_unless_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        run_experiment(&config, false).unwrap();
        let err = run_experiment(&config, false).err().unwrap();
        assert!(err.to_string().contains("already complete"), "got: {err}");
        run_experiment(&config, true).unwrap();
    }

    #[test]
    fn interrupted_training_resumes_by_fold() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let store = ResultsStore::open(&config, false).unwrap();
        let data = materialize(&config).unwrap();
        run_training(&store, &data).unwrap();

        // Delete one fold's artifacts; rerunning repairs exactly that fold
        // and leaves the other bit-identical.
        let policy = &config.policies[0];
        let untouched = fs::read(store.fold_dir(policy, 0).join("model.bin")).unwrap();
        fs::remove_dir_all(store.fold_dir(policy, 1)).unwrap();
        run_training(&store, &data).unwrap();
        assert!(store.fold_dir(policy, 1).join("model.bin").exists());
        assert_eq!(
            fs::read(store.fold_dir(policy, 0).join("model.bin")).unwrap(),
            untouched
        );
    }

    #[test]
    fn persisted_predictions_reproduce_the_holdout_report() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let store = run_experiment(&config, false).unwrap();
        let data = materialize(&config).unwrap();
        let policy = &config.policies[1];
        let fold_dir = store.fold_dir(policy, 0);

        let (indices, labels, predictions) =
            read_predictions_csv::<f64>(&fold_dir.join("holdout_predictions.csv")).unwrap();
        let soft: Vec<LabelDistribution<f64>> = indices
            .iter()
            .map(|&i| data.train.soft_labels.as_ref().unwrap()[i].clone())
            .collect();
        let recomputed = crate::metrics::evaluate_predictions(
            &predictions,
            &labels,
            Some(&soft),
            "holdout",
            &config.eval,
        )
        .unwrap();
        let stored = EvalReport::read_key_value(BufReader::new(
            File::open(fold_dir.join("holdout_report.txt")).unwrap(),
        ))
        .unwrap();
        assert_eq!(recomputed, stored);
    }

    #[test]
    fn stored_models_reject_foreign_digests() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let store = run_experiment(&config, false).unwrap();

        let mut other = config.clone();
        other.seed += 1;
        let other_store = ResultsStore::open(&other, false).unwrap();
        // Copy a model across stores; loading must fail the digest check.
        let src = store.fold_dir(&config.policies[0], 0).join("model.bin");
        let dst_dir = other_store.fold_dir(&other.policies[0], 0);
        fs::create_dir_all(&dst_dir).unwrap();
        fs::copy(&src, dst_dir.join("model.bin")).unwrap();
        fs::write(dst_dir.join("holdout_report.txt"), "stub").unwrap();
        let err = other_store.load_model(&other.policies[0], 0).err().unwrap();
        assert!(err.to_string().contains("digest"));
    }
}
