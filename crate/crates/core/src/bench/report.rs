//! Report emission from a results store.
//!
//! Every value is recomputed from persisted fold-level artifacts, never from
//! in-memory state, so reports are reproducible after the fact and byte
//! -identical across reruns of the same experiment. Three artifacts come
//! out: a policy x dataset metrics table, accuracy/cross-entropy versus
//! shift level, and PGD cross-entropy versus iteration, plus a pre/post
//! attack summary. Absent metrics render as `absent`, never 0.

use std::fs;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use crate::attacks::{AttackMethod, AttackReport, PgdTrace};
use crate::bench::experiment::{read_policy_reports, ResultsStore};
use crate::bench::DatasetSource;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_reports, AggregateReport, MetricSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// Delimited text with full-precision values.
    Csv,
    /// Fixed-width plain-text table.
    Table,
}

impl ReportFormat {
    pub fn parse(raw: &str) -> Result<Self> {
        match raw {
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            other => Err(Error::config(format!(
                "unknown report format '{other}' (expected 'csv' or 'table')"
            ))),
        }
    }

    fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Table => "txt",
        }
    }

    fn number(self, value: f64) -> String {
        match self {
            ReportFormat::Csv => format!("{value:.17e}"),
            ReportFormat::Table => format!("{value:.4}"),
        }
    }

    fn optional(self, value: Option<f64>) -> String {
        value.map(|v| self.number(v)).unwrap_or_else(|| "absent".to_string())
    }
}

/// Rendered report files: `(file name, contents)`.
pub struct ReportDocument {
    pub files: Vec<(String, String)>,
}

fn render_rows(format: ReportFormat, header: &[&str], rows: &[Vec<String>]) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = header.join(",");
            out.push('\n');
            for row in rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        ReportFormat::Table => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in rows {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.len());
                }
            }
            let mut out = String::new();
            for (i, h) in header.iter().enumerate() {
                out.push_str(&format!("{:<width$}  ", h, width = widths[i]));
            }
            out.push('\n');
            for (i, _) in header.iter().enumerate() {
                out.push_str(&"-".repeat(widths[i]));
                out.push_str("  ");
            }
            out.push('\n');
            for row in rows {
                for (i, cell) in row.iter().enumerate() {
                    out.push_str(&format!("{:<width$}  ", cell, width = widths[i]));
                }
                out.push('\n');
            }
            out
        }
    }
}

fn summary_cells(format: ReportFormat, summary: Option<&MetricSummary>) -> (String, String) {
    match summary {
        Some(s) => (format.number(s.mean), format.number(s.std)),
        None => ("absent".to_string(), "absent".to_string()),
    }
}

/// Dataset names in report order: the holdout fold first, then the
/// configured test datasets.
fn dataset_names(store: &ResultsStore) -> Vec<String> {
    let mut names = vec!["holdout".to_string()];
    match &store.config().dataset {
        DatasetSource::Synthetic { synth } => {
            names.extend(synth.shift_levels.iter().map(|level| format!("shift-{level}")));
        }
        DatasetSource::Files { tests, .. } => {
            names.extend(tests.iter().map(|spec| spec.name()));
        }
    }
    names
}

/// Shift level per synthetic test dataset name.
fn shift_levels(store: &ResultsStore) -> Vec<(String, f64)> {
    match &store.config().dataset {
        DatasetSource::Synthetic { synth } => synth
            .shift_levels
            .iter()
            .map(|&level| (format!("shift-{level}"), level))
            .collect(),
        DatasetSource::Files { .. } => Vec::new(),
    }
}

struct PolicyAggregates {
    policy_label: String,
    /// Aggregate per dataset name, in report order.
    by_dataset: Vec<(String, Option<AggregateReport>)>,
}

fn collect_aggregates(store: &ResultsStore) -> Result<Vec<PolicyAggregates>> {
    let names = dataset_names(store);
    let mut out = Vec::new();
    for policy in &store.config().policies {
        let stored = read_policy_reports(store, policy)?;
        let mut by_dataset = Vec::new();
        for name in &names {
            let aggregate = match stored.by_dataset.get(name) {
                None => None,
                Some(folds) => {
                    Some(aggregate_reports(folds.iter().map(|(_, report)| report))?)
                }
            };
            by_dataset.push((name.clone(), aggregate));
        }
        out.push(PolicyAggregates { policy_label: policy.label(), by_dataset });
    }
    Ok(out)
}

fn metrics_table(format: ReportFormat, aggregates: &[PolicyAggregates]) -> String {
    let header = [
        "policy",
        "dataset",
        "n_folds",
        "top1_mean",
        "top1_std",
        "ce_hard_mean",
        "ce_hard_std",
        "ce_soft_mean",
        "ce_soft_std",
        "sba_mean",
        "sba_std",
        "conf_correct_mean",
        "conf_incorrect_mean",
    ];
    let mut rows = Vec::new();
    for policy in aggregates {
        for (dataset, aggregate) in &policy.by_dataset {
            let Some(agg) = aggregate else {
                rows.push(
                    std::iter::once(policy.policy_label.clone())
                        .chain(std::iter::once(dataset.clone()))
                        .chain(std::iter::once("0".to_string()))
                        .chain(std::iter::repeat_n("absent".to_string(), header.len() - 3))
                        .collect(),
                );
                continue;
            };
            let (top1_m, top1_s) = summary_cells(format, Some(&agg.top1_accuracy));
            let (ceh_m, ceh_s) = summary_cells(format, Some(&agg.crossentropy_vs_hard));
            let (ces_m, ces_s) = summary_cells(format, agg.crossentropy_vs_soft.as_ref());
            let (sba_m, sba_s) = summary_cells(format, agg.sba.as_ref());
            let conf_c =
                format.optional(agg.mean_confidence_correct.as_ref().map(|s| s.mean));
            let conf_i =
                format.optional(agg.mean_confidence_incorrect.as_ref().map(|s| s.mean));
            rows.push(vec![
                policy.policy_label.clone(),
                dataset.clone(),
                agg.n_reports.to_string(),
                top1_m,
                top1_s,
                ceh_m,
                ceh_s,
                ces_m,
                ces_s,
                sba_m,
                sba_s,
                conf_c,
                conf_i,
            ]);
        }
    }
    render_rows(format, &header, &rows)
}

fn shift_series(
    format: ReportFormat,
    store: &ResultsStore,
    aggregates: &[PolicyAggregates],
) -> Option<String> {
    let levels = shift_levels(store);
    if levels.is_empty() {
        return None;
    }
    let header = [
        "policy",
        "shift_level",
        "top1_mean",
        "top1_std",
        "ce_hard_mean",
        "ce_hard_std",
        "ce_soft_mean",
        "ce_soft_std",
    ];
    let mut rows = Vec::new();
    for policy in aggregates {
        for (name, level) in &levels {
            let aggregate = policy
                .by_dataset
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, a)| a.as_ref());
            let Some(agg) = aggregate else {
                continue;
            };
            let (top1_m, top1_s) = summary_cells(format, Some(&agg.top1_accuracy));
            let (ceh_m, ceh_s) = summary_cells(format, Some(&agg.crossentropy_vs_hard));
            let (ces_m, ces_s) = summary_cells(format, agg.crossentropy_vs_soft.as_ref());
            rows.push(vec![
                policy.policy_label.clone(),
                format.number(*level),
                top1_m,
                top1_s,
                ceh_m,
                ceh_s,
                ces_m,
                ces_s,
            ]);
        }
    }
    Some(render_rows(format, &header, &rows))
}

fn attack_artifacts(
    format: ReportFormat,
    store: &ResultsStore,
) -> Result<(Option<String>, Option<String>)> {
    let config = store.config();
    if config.attacks.is_empty() {
        return Ok((None, None));
    }
    let mut summary_rows = Vec::new();
    let mut curve_rows = Vec::new();
    for policy in &config.policies {
        for attack in &config.attacks {
            let dir = store.attack_dir(policy, attack);
            let mut reports = Vec::new();
            let mut traces = Vec::new();
            for fold in 0..config.k_folds {
                let path = dir.join(format!("fold_{fold:02}.txt"));
                if path.exists() {
                    reports.push(AttackReport::read_key_value(BufReader::new(File::open(path)?))?);
                }
                let curve = dir.join(format!("fold_{fold:02}_curve.csv"));
                if curve.exists() {
                    traces.push(PgdTrace::read_csv(BufReader::new(File::open(curve)?))?);
                }
            }
            if reports.is_empty() {
                continue;
            }
            let n = reports.len();
            let mean = |f: &dyn Fn(&AttackReport) -> f64| -> f64 {
                reports.iter().map(|r| f(r)).sum::<f64>() / n as f64
            };
            summary_rows.push(vec![
                policy.label(),
                attack.label(),
                n.to_string(),
                format.number(mean(&|r| r.pre_accuracy)),
                format.number(mean(&|r| r.post_accuracy)),
                format.number(mean(&|r| r.pre_crossentropy)),
                format.number(mean(&|r| r.post_crossentropy)),
            ]);
            if attack.method == AttackMethod::Pgd && !traces.is_empty() {
                let steps = traces[0].mean_ce_best.len();
                for trace in &traces {
                    if trace.mean_ce_best.len() != steps {
                        return Err(Error::data(format!(
                            "inconsistent PGD curve lengths for {}",
                            attack.label()
                        )));
                    }
                }
                for i in 0..steps {
                    let best =
                        traces.iter().map(|t| t.mean_ce_best[i]).sum::<f64>() / traces.len() as f64;
                    let raw =
                        traces.iter().map(|t| t.mean_ce_raw[i]).sum::<f64>() / traces.len() as f64;
                    curve_rows.push(vec![
                        policy.label(),
                        attack.label(),
                        i.to_string(),
                        format.number(best),
                        format.number(raw),
                    ]);
                }
            }
        }
    }
    let summary = (!summary_rows.is_empty()).then(|| {
        render_rows(
            format,
            &["policy", "attack", "n_folds", "pre_acc", "post_acc", "pre_ce", "post_ce"],
            &summary_rows,
        )
    });
    let curves = (!curve_rows.is_empty()).then(|| {
        render_rows(
            format,
            &["policy", "attack", "iteration", "mean_ce_best", "mean_ce_raw"],
            &curve_rows,
        )
    });
    Ok((summary, curves))
}

/// Render the report artifacts and write them under `<store>/report/`.
pub fn emit_report(store: &ResultsStore, format: ReportFormat) -> Result<ReportDocument> {
    let aggregates = collect_aggregates(store)?;
    let any_reports = aggregates.iter().any(|p| p.by_dataset.iter().any(|(_, a)| a.is_some()));
    if !any_reports {
        return Err(Error::data("results store has no persisted fold reports"));
    }
    let ext = format.extension();
    let mut files = Vec::new();
    files.push((format!("metrics.{ext}"), metrics_table(format, &aggregates)));
    if let Some(series) = shift_series(format, store, &aggregates) {
        files.push((format!("shift_series.{ext}"), series));
    }
    let (attack_summary, pgd_curves) = attack_artifacts(format, store)?;
    if let Some(summary) = attack_summary {
        files.push((format!("attacks.{ext}"), summary));
    }
    if let Some(curves) = pgd_curves {
        files.push((format!("pgd_curves.{ext}"), curves));
    }

    let report_dir = store.root().join("report");
    fs::create_dir_all(&report_dir)?;
    for (name, contents) in &files {
        fs::write(report_dir.join(name), contents)?;
    }
    Ok(ReportDocument { files })
}

/// Paths the emitter writes for a given format.
pub fn report_paths(store: &ResultsStore, format: ReportFormat) -> Vec<PathBuf> {
    let ext = format.extension();
    ["metrics", "shift_series", "attacks", "pgd_curves"]
        .iter()
        .map(|stem| store.root().join("report").join(format!("{stem}.{ext}")))
        .collect()
}
