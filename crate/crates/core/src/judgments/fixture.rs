//! Synthetic judgment-file generation.
//!
//! Emits records (and files) in the same schema the parser consumes, so the
//! whole ingestion pipeline is testable without any real study data.
//! Attention checks are marked explicitly and inserted every
//! `check_every` trials; per-annotator reliability controls how often they
//! are answered correctly.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::judgments::{JudgmentRecord, JudgmentSchema};
use crate::seeding::{derive_rng, stream};

#[derive(Clone, Debug)]
pub struct FixtureAnnotator {
    pub id: String,
    /// Probability of answering an attention check correctly.
    pub check_reliability: f64,
}

#[derive(Clone, Debug)]
pub struct FixtureConfig {
    pub k: usize,
    pub n_images: usize,
    /// Stimulus trials per annotator (checks are inserted on top).
    pub trials_per_annotator: usize,
    /// One attention check after every `check_every` stimulus trials.
    pub check_every: usize,
    /// Probability a stimulus judgment lands off the image's true class.
    pub confusion: f64,
    pub annotators: Vec<FixtureAnnotator>,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_images: 40,
            trials_per_annotator: 40,
            check_every: 20,
            confusion: 0.2,
            annotators: (0..8)
                .map(|i| FixtureAnnotator {
                    id: format!("ann_{i:03}"),
                    check_reliability: 1.0,
                })
                .collect(),
            seed: 0,
        }
    }
}

/// True class of a fixture image: round-robin over the `k` classes.
pub fn fixture_image_class(image_index: usize, k: usize) -> usize {
    image_index % k
}

/// Generate judgment records for every annotator in the config.
pub fn generate_records(config: &FixtureConfig) -> Vec<JudgmentRecord> {
    let mut records = Vec::new();
    for (a_idx, annotator) in config.annotators.iter().enumerate() {
        let mut rng = derive_rng(config.seed, &[stream::FIXTURE, a_idx as u64]);
        let mut image_order: Vec<usize> = (0..config.n_images).collect();
        image_order.shuffle(&mut rng);

        let mut trial = 0usize;
        let mut check_counter = 0usize;
        for s in 0..config.trials_per_annotator {
            let image = image_order[s % config.n_images];
            let truth = fixture_image_class(image, config.k);
            let chosen = if rng.random::<f64>() < config.confusion {
                offset_class(truth, &mut rng, config.k)
            } else {
                truth
            };
            records.push(JudgmentRecord {
                annotator_id: annotator.id.clone(),
                image_id: format!("img_{image:05}"),
                chosen_class: chosen,
                trial_index: trial,
                is_attention_check: false,
                true_class: Some(truth),
            });
            trial += 1;
            if (s + 1) % config.check_every == 0 {
                let truth = check_counter % config.k;
                let chosen = if rng.random::<f64>() < annotator.check_reliability {
                    truth
                } else {
                    offset_class(truth, &mut rng, config.k)
                };
                records.push(JudgmentRecord {
                    annotator_id: annotator.id.clone(),
                    image_id: format!("check_{check_counter:03}"),
                    chosen_class: chosen,
                    trial_index: trial,
                    is_attention_check: true,
                    true_class: Some(truth),
                });
                trial += 1;
                check_counter += 1;
            }
        }
    }
    records
}

fn offset_class(truth: usize, rng: &mut impl Rng, k: usize) -> usize {
    if k == 1 {
        return truth;
    }
    (truth + rng.random_range(1..k)) % k
}

/// Serialize records in the standard schema.
pub fn write_judgment_file<W: Write>(
    mut writer: W,
    records: &[JudgmentRecord],
    schema: &JudgmentSchema,
    delimiter: u8,
) -> Result<()> {
    let d = delimiter as char;
    writeln!(
        writer,
        "{}{d}{}{d}{}{d}{}{d}{}{d}{}",
        schema.annotator_id,
        schema.image_id,
        schema.chosen_class,
        schema.trial_index,
        schema.is_attention_check,
        schema.true_class
    )?;
    for r in records {
        let truth = r.true_class.map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            writer,
            "{}{d}{}{d}{}{d}{}{d}{}{d}{}",
            r.annotator_id,
            r.image_id,
            r.chosen_class,
            r.trial_index,
            u8::from(r.is_attention_check),
            truth
        )?;
    }
    Ok(())
}
