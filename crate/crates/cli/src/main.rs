//! `softlabel` command-line interface.
//!
//! Subcommands: `aggregate` (judgments -> soft-label file), `synth` (world
//! generation), `train`, `evaluate`, `attack` (experiment phases against a
//! results store), and `report` (table emission).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use softlabel_core::bench::{
    emit_report, materialize, run_attacks, run_evaluation, run_training, write_feature_text,
    ExperimentConfig, ReportFormat, ResultsStore, SynthWorld, SynthWorldConfig,
};
use softlabel_core::judgments::{
    aggregate_distributions, dataset_summary, filter_accepted, parse_judgments, score_annotators,
    write_soft_label_file, write_summary, JudgmentSchema,
};
use softlabel_core::{Error, Result};

#[derive(Parser)]
#[command(name = "softlabel", version, about = "Soft-label training and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate raw judgments into a per-image soft-label file.
    Aggregate(AggregateArgs),
    /// Generate a synthetic world and export its datasets as files.
    Synth(SynthArgs),
    /// Train cross-validated models for every policy in the config.
    Train(ExperimentArgs),
    /// Evaluate persisted fold models on the config's test datasets.
    Evaluate(ExperimentArgs),
    /// Run the configured attacks against persisted fold models.
    Attack(ExperimentArgs),
    /// Emit report tables from a results store.
    Report(ReportArgs),
}

#[derive(Args)]
struct AggregateArgs {
    /// Raw judgment file (delimited text with a header row).
    #[arg(long)]
    input: PathBuf,
    /// Soft-label output file.
    #[arg(long)]
    output: PathBuf,
    /// Optional key:value summary report path.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Number of classes.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Attention-check accuracy threshold for keeping an annotator.
    #[arg(long, default_value_t = 0.75)]
    threshold: f64,
    /// Additive smoothing applied during aggregation.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
    /// Field delimiter (single character).
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Column name overrides.
    #[arg(long)]
    col_annotator: Option<String>,
    #[arg(long)]
    col_image: Option<String>,
    #[arg(long)]
    col_chosen: Option<String>,
    #[arg(long)]
    col_trial: Option<String>,
    #[arg(long)]
    col_attention: Option<String>,
    #[arg(long)]
    col_truth: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file holding the synthetic world parameters.
    #[arg(long)]
    config: PathBuf,
    /// Directory the dataset files are written into.
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the world seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace an existing world in the output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the experiment seed (this changes the store digest).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Redo a completed experiment from scratch.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Output format: `csv` or `table`.
    #[arg(long, default_value = "table")]
    format: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Aggregate(args) => aggregate(args),
        Command::Synth(args) => synth(args),
        Command::Train(args) => {
            let config = load_experiment_config(&args)?;
            let store = ResultsStore::open(&config, args.overwrite)?;
            let data = materialize(&config)?;
            run_training(&store, &data)?;
            println!("trained {} policies into {}", config.policies.len(), store.root().display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let config = load_experiment_config(&args)?;
            let store = ResultsStore::open_existing(&config)?;
            let data = materialize(&config)?;
            run_evaluation(&store, &data)?;
            println!("evaluated {} test datasets", data.tests.len());
            Ok(())
        }
        Command::Attack(args) => {
            let config = load_experiment_config(&args)?;
            let store = ResultsStore::open_existing(&config)?;
            let data = materialize(&config)?;
            run_attacks(&store, &data)?;
            println!("ran {} attack configs", config.attacks.len());
            Ok(())
        }
        Command::Report(args) => {
            let config = load_experiment_config(&args.experiment)?;
            let store = ResultsStore::open_existing(&config)?;
            let format = ReportFormat::parse(&args.format)?;
            let document = emit_report(&store, format)?;
            for (name, contents) in &document.files {
                println!("# {}", store.root().join("report").join(name).display());
                print!("{contents}");
                println!();
            }
            Ok(())
        }
    }
}

fn load_experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = &args.out_dir {
        config.out_dir = out_dir.clone();
    }
    Ok(config)
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    let delimiter = {
        let bytes = args.delimiter.as_bytes();
        if bytes.len() != 1 {
            return Err(Error::config(format!(
                "delimiter must be a single character, got '{}'",
                args.delimiter
            )));
        }
        bytes[0]
    };
    let mut schema = JudgmentSchema::default();
    if let Some(name) = args.col_annotator {
        schema.annotator_id = name;
    }
    if let Some(name) = args.col_image {
        schema.image_id = name;
    }
    if let Some(name) = args.col_chosen {
        schema.chosen_class = name;
    }
    if let Some(name) = args.col_trial {
        schema.trial_index = name;
    }
    if let Some(name) = args.col_attention {
        schema.is_attention_check = name;
    }
    if let Some(name) = args.col_truth {
        schema.true_class = name;
    }

    let input = File::open(&args.input)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", args.input.display())))?;
    let records = parse_judgments(BufReader::new(input), &schema, args.k, delimiter)?;
    let stats = score_annotators(&records, args.threshold)?;
    let kept = filter_accepted(&records, &stats);
    let aggregation =
        aggregate_distributions::<f64>(&kept, args.k, args.smoothing)?;
    let summary = dataset_summary(&records, args.threshold)?;

    if aggregation.distributions.is_empty() {
        return Err(Error::data("no images survived filtering; nothing to write"));
    }
    write_soft_label_file(
        BufWriter::new(File::create(&args.output)?),
        &aggregation.distributions,
    )?;
    if let Some(summary_path) = &args.summary {
        write_summary(BufWriter::new(File::create(summary_path)?), &summary)?;
    }

    println!(
        "{} judgments from {} annotators ({} rejected); wrote {} soft labels to {}",
        summary.total_judgments + summary.attention_checks,
        summary.n_annotators,
        summary.rejected_annotators,
        aggregation.distributions.len(),
        args.output.display()
    );
    if !aggregation.excluded_images.is_empty() {
        println!(
            "excluded {} image(s) with no stimulus judgments",
            aggregation.excluded_images.len()
        );
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut world_config: SynthWorldConfig =
        toml::from_str(&text).map_err(|e| Error::config(format!("bad synth config: {e}")))?;
    if let Some(seed) = args.seed {
        world_config.seed = seed;
    }

    let manifest = args.out_dir.join("world.toml");
    if manifest.exists() && !args.overwrite {
        return Err(Error::data(format!(
            "world already exists at {}; pass --overwrite to replace it",
            args.out_dir.display()
        )));
    }
    let world = SynthWorld::new(world_config.clone())?;
    let (train, tests) = world.make::<f64>()?;

    fs::create_dir_all(&args.out_dir)?;
    fs::write(
        &manifest,
        toml::to_string(&world_config)
            .map_err(|e| Error::config(format!("cannot serialize world config: {e}")))?,
    )?;
    for dataset in std::iter::once(&train).chain(&tests) {
        let ids: Vec<String> =
            (0..dataset.len()).map(|i| format!("{}_{i:06}", dataset.name)).collect();
        let feature_path = args.out_dir.join(format!("{}.features.csv", dataset.name));
        write_feature_text(
            BufWriter::new(File::create(&feature_path)?),
            &ids,
            &dataset.hard_labels,
            &dataset.features,
        )?;
        if let Some(soft) = &dataset.soft_labels {
            let map: std::collections::BTreeMap<String, softlabel_core::LabelDistribution64> =
                ids.iter().cloned().zip(soft.iter().cloned()).collect();
            let soft_path = args.out_dir.join(format!("{}.soft.csv", dataset.name));
            write_soft_label_file(BufWriter::new(File::create(&soft_path)?), &map)?;
        }
        println!("wrote {} ({} examples)", feature_path.display(), dataset.len());
    }
    Ok(())
}
