//! Delimited judgment-file parsing.

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judgments::JudgmentRecord;

/// Maps the logical record fields onto column names in the input file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgmentSchema {
    pub annotator_id: String,
    pub image_id: String,
    pub chosen_class: String,
    pub trial_index: String,
    pub is_attention_check: String,
    pub true_class: String,
}

impl Default for JudgmentSchema {
    fn default() -> Self {
        Self {
            annotator_id: "annotator_id".into(),
            image_id: "image_id".into(),
            chosen_class: "chosen_class".into(),
            trial_index: "trial_index".into(),
            is_attention_check: "is_attention_check".into(),
            true_class: "true_class".into(),
        }
    }
}

struct ColumnIndices {
    annotator_id: usize,
    image_id: usize,
    chosen_class: usize,
    trial_index: usize,
    is_attention_check: usize,
    true_class: usize,
}

fn locate(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::data(format!("missing required column '{name}'")))
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'r str> {
    record
        .get(idx)
        .ok_or_else(|| Error::parse(line, format!("row too short, no '{name}' field")))
}

fn parse_usize(raw: &str, name: &str, line: u64) -> Result<usize> {
    raw.trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(line, format!("cannot parse '{raw}' as {name}")))
}

fn parse_bool(raw: &str, name: &str, line: u64) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(Error::parse(line, format!("cannot parse '{raw}' as boolean {name}"))),
    }
}

/// `None` sentinels for the `true_class` column.
fn parse_true_class(raw: &str, k: usize, line: u64) -> Result<Option<usize>> {
    let trimmed = raw.trim();
    if trimmed.is_empty()
        || trimmed == "-1"
        || trimmed.eq_ignore_ascii_case("unknown")
        || trimmed.eq_ignore_ascii_case("na")
    {
        return Ok(None);
    }
    let value = parse_usize(trimmed, "true_class", line)?;
    if value >= k {
        return Err(Error::parse(line, format!("true_class {value} out of range for K={k}")));
    }
    Ok(Some(value))
}

/// Parse a delimited judgment file into records.
///
/// The file must have a header row naming the columns in `schema`. Rows with
/// out-of-range class indices, malformed fields, or duplicate
/// `(annotator_id, trial_index)` pairs are rejected with their line number.
pub fn parse_judgments<R: Read>(
    source: R,
    schema: &JudgmentSchema,
    k: usize,
    delimiter: u8,
) -> Result<Vec<JudgmentRecord>> {
    if k == 0 {
        return Err(Error::config("K must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header row: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::data("empty judgment file"));
    }
    let cols = ColumnIndices {
        annotator_id: locate(&headers, &schema.annotator_id)?,
        image_id: locate(&headers, &schema.image_id)?,
        chosen_class: locate(&headers, &schema.chosen_class)?,
        trial_index: locate(&headers, &schema.trial_index)?,
        is_attention_check: locate(&headers, &schema.is_attention_check)?,
        true_class: locate(&headers, &schema.true_class)?,
    };

    let mut records = Vec::new();
    let mut seen_trials: HashSet<(String, usize)> = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(line, format!("malformed row: {e}"))
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);

        let annotator_id = field(&row, cols.annotator_id, "annotator_id", line)?.to_string();
        let image_id = field(&row, cols.image_id, "image_id", line)?.to_string();
        let chosen_class =
            parse_usize(field(&row, cols.chosen_class, "chosen_class", line)?, "chosen_class", line)?;
        if chosen_class >= k {
            return Err(Error::parse(
                line,
                format!("chosen_class {chosen_class} out of range for K={k}"),
            ));
        }
        let trial_index =
            parse_usize(field(&row, cols.trial_index, "trial_index", line)?, "trial_index", line)?;
        let is_attention_check = parse_bool(
            field(&row, cols.is_attention_check, "is_attention_check", line)?,
            "is_attention_check",
            line,
        )?;
        let true_class = parse_true_class(field(&row, cols.true_class, "true_class", line)?, k, line)?;
        if is_attention_check && true_class.is_none() {
            return Err(Error::parse(
                line,
                format!("attention check for annotator {annotator_id} lacks a true class"),
            ));
        }
        if !seen_trials.insert((annotator_id.clone(), trial_index)) {
            return Err(Error::parse(
                line,
                format!("duplicate trial {trial_index} for annotator {annotator_id}"),
            ));
        }
        records.push(JudgmentRecord {
            annotator_id,
            image_id,
            chosen_class,
            trial_index,
            is_attention_check,
            true_class,
        });
    }
    Ok(records)
}
