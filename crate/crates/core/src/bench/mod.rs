//! Benchmark orchestration: dataset loading, the synthetic world, experiment
//! runs, results persistence, and report emission.

mod dataset;
pub mod experiment;
mod report;
mod synth;

pub use dataset::{
    load_cifar_binary, load_dataset, parse_cifar_bytes, read_feature_text, write_feature_text,
    DatasetSpec, FeatureTextData, LoadOutcome, Provenance, SoftLabelDataset, CIFAR_FEATURE_DIM,
};
pub use experiment::{
    materialize, read_policy_reports, run_attacks, run_evaluation, run_experiment, run_training,
    DatasetSource, ExperimentConfig, ExperimentData, ResultsStore, TrainSettings,
};
pub use report::{emit_report, report_paths, ReportDocument, ReportFormat};
pub use synth::{mean_soft_entropy, SynthWorld, SynthWorldConfig};
