//! Disambiguation accuracy, macro averages, entity-frequency buckets and
//! report rendering.
//!
//! Accuracies are percentages in `[0, 100]`, kept at full precision and
//! rounded half-up to two decimals only for display.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::PredictionSet;
use crate::model::{Dataset, Entity, KnowledgeBase};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no scorable mentions in dataset {0:?}")]
    EmptyDataset(String),
    #[error("cannot average an empty list")]
    EmptyList,
    #[error("{preds} prediction sets for {gold} datasets")]
    LengthMismatch { preds: usize, gold: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score mentions whose gold id is the NIL sentinel.
    pub include_nil: bool,
}

/// Half-up rounding to two decimals. The nudge absorbs binary
/// representation error so that e.g. 81.605 rounds to 81.61.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-7).floor() / 100.0
}

pub fn format2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Percentage of scored mentions whose top-1 prediction is the gold entity.
/// Missing predictions and no-predictions count as wrong.
pub fn accuracy(
    preds: &PredictionSet,
    gold: &Dataset,
    opts: EvalOptions,
) -> Result<f64, EvalError> {
    let mut scored = 0usize;
    let mut correct = 0usize;
    for mc in &gold.records {
        if mc.is_nil() && !opts.include_nil {
            continue;
        }
        scored += 1;
        let hit = preds
            .get(&mc.key())
            .and_then(|p| p.top1())
            .is_some_and(|top| top.entity_id == mc.gold_entity_id);
        correct += usize::from(hit);
    }
    if scored == 0 {
        return Err(EvalError::EmptyDataset(gold.name.clone()));
    }
    Ok(100.0 * correct as f64 / scored as f64)
}

/// Unweighted arithmetic mean.
pub fn macro_average(scores: &[f64]) -> Result<f64, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyList);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Accuracy per system and dataset, with datasets in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub datasets: Vec<String>,
    pub rows: IndexMap<String, IndexMap<String, f64>>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, system: &str, dataset: &str, accuracy: f64) {
        if !self.datasets.iter().any(|d| d == dataset) {
            self.datasets.push(dataset.to_string());
        }
        self.rows
            .entry(system.to_string())
            .or_default()
            .insert(dataset.to_string(), accuracy);
    }

    /// Macro average over the datasets the system was scored on.
    pub fn avg(&self, system: &str) -> Option<f64> {
        let row = self.rows.get(system)?;
        let values: Vec<f64> = self
            .datasets
            .iter()
            .filter_map(|d| row.get(d).copied())
            .collect();
        macro_average(&values).ok()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["System".to_string()];
        h.extend(self.datasets.iter().cloned());
        h.push("AVG".into());
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(system, row)| {
                let mut cells = vec![system.clone()];
                for d in &self.datasets {
                    cells.push(
                        row.get(d)
                            .map(|v| format2(*v))
                            .unwrap_or_else(|| "-".into()),
                    );
                }
                cells.push(self.avg(system).map(format2).unwrap_or_else(|| "-".into()));
                cells
            })
            .collect()
    }
}

/// Entities with pagerank in `[10^exponent, 10^(exponent + 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBucket {
    pub exponent: i32,
    pub n_entities: usize,
    pub n_mentions: usize,
    pub accuracy: f64,
}

/// `floor(log10(p))`, corrected at exact powers of ten.
pub fn bucket_exponent(p: f64) -> Option<i32> {
    if !(p > 0.0 && p.is_finite()) {
        return None;
    }
    let mut k = p.log10().floor() as i32;
    let pow = |e: i32| -> f64 { format!("1e{e}").parse().expect("valid float literal") };
    if pow(k) > p {
        k -= 1;
    } else if pow(k + 1) <= p {
        k += 1;
    }
    Some(k)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BucketAssignment<'a> {
    pub buckets: BTreeMap<i32, Vec<&'a Entity>>,
    /// Entities without a usable pagerank.
    pub excluded: usize,
}

/// Groups entities by the decade of their pagerank. Only populated buckets
/// appear.
pub fn bucket_by_frequency<'a, I>(entities: I) -> BucketAssignment<'a>
where
    I: IntoIterator<Item = &'a Entity>,
{
    let mut out = BucketAssignment::default();
    for e in entities {
        match e.pagerank.and_then(bucket_exponent) {
            Some(k) => out.buckets.entry(k).or_default().push(e),
            None => out.excluded += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BucketReport {
    pub buckets: Vec<FrequencyBucket>,
    /// Scored mentions whose gold entity is unknown or has no pagerank.
    pub excluded_mentions: usize,
    pub excluded_entities: usize,
}

impl BucketReport {
    pub fn total_mentions(&self) -> usize {
        self.buckets.iter().map(|b| b.n_mentions).sum::<usize>() + self.excluded_mentions
    }
}

/// Accuracy per frequency bucket. Each gold entity's accuracy is computed
/// across all datasets first; a bucket's accuracy is the unweighted mean
/// over its entities.
pub fn bucket_accuracy(
    preds: &[PredictionSet],
    gold: &[Dataset],
    kb: &KnowledgeBase,
    opts: EvalOptions,
) -> Result<BucketReport, EvalError> {
    if preds.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            gold: gold.len(),
        });
    }
    // entity id -> (mentions, correct)
    let mut per_entity: HashMap<&str, (usize, usize)> = HashMap::new();
    for (set, dataset) in preds.iter().zip(gold) {
        for mc in &dataset.records {
            if mc.is_nil() && !opts.include_nil {
                continue;
            }
            let hit = set
                .get(&mc.key())
                .and_then(|p| p.top1())
                .is_some_and(|top| top.entity_id == mc.gold_entity_id);
            let entry = per_entity.entry(mc.gold_entity_id.as_str()).or_default();
            entry.0 += 1;
            entry.1 += usize::from(hit);
        }
    }

    let mut report = BucketReport::default();
    let mut grouped: BTreeMap<i32, Vec<(usize, usize)>> = BTreeMap::new();
    for (id, counts) in per_entity {
        match kb
            .get(id)
            .and_then(|e| e.pagerank)
            .and_then(bucket_exponent)
        {
            Some(k) => grouped.entry(k).or_default().push(counts),
            None => {
                report.excluded_entities += 1;
                report.excluded_mentions += counts.0;
            }
        }
    }
    report.buckets = grouped
        .into_iter()
        .map(|(exponent, entities)| {
            let accs: Vec<f64> = entities
                .iter()
                .map(|&(n, c)| 100.0 * c as f64 / n as f64)
                .collect();
            FrequencyBucket {
                exponent,
                n_entities: entities.len(),
                n_mentions: entities.iter().map(|e| e.0).sum(),
                accuracy: macro_average(&accs).unwrap_or(0.0),
            }
        })
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let rule: Vec<&str> = header
        .iter()
        .enumerate()
        .map(|(i, _)| if i == 0 { "---" } else { "---:" })
        .collect();
    let _ = writeln!(out, "| {} |", rule.join(" | "));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

fn render(header: &[String], rows: &[Vec<String>], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(header, rows),
        ReportFormat::Csv => csv_text(header, rows),
    }
}

/// Renders the table with datasets in insertion order and AVG last.
pub fn emit_score_report(table: &ScoreTable, format: ReportFormat) -> String {
    render(&table.header(), &table.cells(), format)
}

pub fn emit_bucket_report(report: &BucketReport, format: ReportFormat) -> String {
    let header: Vec<String> = ["exponent", "n_entities", "n_mentions", "accuracy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .buckets
        .iter()
        .map(|b| {
            vec![
                b.exponent.to_string(),
                b.n_entities.to_string(),
                b.n_mentions.to_string(),
                format2(b.accuracy),
            ]
        })
        .collect();
    render(&header, &rows, format)
}

/// One JSON record per bucket, for plotting.
pub fn bucket_records(report: &BucketReport) -> String {
    report
        .buckets
        .iter()
        .map(|b| serde_json::to_string(b).expect("bucket serializes") + "\n")
        .collect()
}
