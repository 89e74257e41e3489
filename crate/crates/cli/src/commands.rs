//! One function per subcommand. Each reads its declared inputs from the
//! output tree and writes its artifacts there, so `run` is literally the
//! four stage commands called in order.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use llmael_core::ensemble::{vote_prediction_sets, VoteMethod};
use llmael_core::eval::{
    bucket_accuracy, bucket_records, emit_bucket_report, emit_score_report, EvalOptions,
    ReportFormat, ScoreTable,
};
use llmael_core::fusion::augment_training_set_with;
use llmael_core::gateway::{
    CompletionCache, CompletionProvider, Gateway, HttpProvider, MockProvider,
};
use llmael_core::io::{
    load_augmentations, load_dataset, load_kb, load_predictions, save_augmentations, save_dataset,
    save_predictions,
};
use llmael_core::linker::{BaselineLinker, LinkerBackend, RemoteLinker};
use llmael_core::par::Execution;
use llmael_core::pipeline::{link_dataset, score_datasets};
use llmael_core::{Dataset, KnowledgeBase};

use crate::config::{BackendSetting, DatasetSpec, ProviderSetting, Settings};

#[derive(Debug, Deserialize)]
struct LexiconEntry {
    cue: String,
    gloss: String,
}

/// Reads a JSONL file of `{"cue": ..., "gloss": ...}` records.
pub fn load_lexicon(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let e: LexiconEntry = serde_json::from_str(l).with_context(|| {
                format!("{}:{}: malformed lexicon entry", path.display(), i + 1)
            })?;
            Ok((e.cue, e.gloss))
        })
        .collect()
}

pub fn build_provider(settings: &Settings) -> Result<Box<dyn CompletionProvider>> {
    Ok(match &settings.provider {
        ProviderSetting::Mock { lexicon: None } => Box::new(MockProvider::new()),
        ProviderSetting::Mock { lexicon: Some(p) } => {
            Box::new(MockProvider::with_lexicon(load_lexicon(p)?))
        }
        ProviderSetting::Http { endpoint, model } => {
            Box::new(HttpProvider::from_env(endpoint.clone(), model.clone()))
        }
    })
}

fn build_backend<'kb>(settings: &Settings, kb: &'kb KnowledgeBase) -> Box<dyn LinkerBackend + 'kb> {
    match &settings.backend {
        BackendSetting::Baseline => Box::new(BaselineLinker::new(kb)),
        BackendSetting::Remote { endpoint } => Box::new(RemoteLinker::new(endpoint.clone())),
    }
}

fn load_specs(specs: &[DatasetSpec]) -> Result<Vec<Dataset>> {
    specs
        .iter()
        .map(|s| {
            let mut ds =
                load_dataset(&s.path).with_context(|| format!("loading dataset {}", s.name))?;
            ds.name = s.name.clone();
            Ok(ds)
        })
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentSummary {
    pub mentions: usize,
    pub generated: usize,
    pub cache_hits: usize,
}

fn augment_specs(
    settings: &Settings,
    provider: &dyn CompletionProvider,
    specs: &[DatasetSpec],
) -> Result<AugmentSummary> {
    let cache = CompletionCache::open(&settings.cache)?;
    let gateway = Gateway::new(provider, &cache).max_in_flight(settings.max_in_flight);
    let mut summary = AugmentSummary::default();
    for (spec, dataset) in specs.iter().zip(load_specs(specs)?) {
        let outcome = gateway.augment_dataset(&dataset, settings.prompt, &settings.params);
        if let Some(first) = outcome.failures.first() {
            bail!(
                "augmenting {}: {} of {} mentions failed; first at {}: {}",
                spec.name,
                outcome.failures.len(),
                dataset.len(),
                first.key,
                first.error
            );
        }
        let path = settings.augment_path(&spec.name);
        ensure_parent(&path)?;
        save_augmentations(&path, &outcome.set)?;
        log::info!(
            "augment {}: {} mentions, {} generated, {} from cache -> {}",
            spec.name,
            dataset.len(),
            outcome.generated,
            outcome.cache_hits,
            path.display()
        );
        summary.mentions += dataset.len();
        summary.generated += outcome.generated;
        summary.cache_hits += outcome.cache_hits;
    }
    Ok(summary)
}

/// Generates a description for every mention of every configured dataset.
pub fn augment(settings: &Settings) -> Result<AugmentSummary> {
    let provider = build_provider(settings)?;
    augment_with(settings, provider.as_ref())
}

pub fn augment_with(
    settings: &Settings,
    provider: &dyn CompletionProvider,
) -> Result<AugmentSummary> {
    augment_specs(settings, provider, &settings.datasets)
}

fn fuse_specs(
    settings: &Settings,
    specs: &[DatasetSpec],
    target: impl Fn(&str) -> PathBuf,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (spec, dataset) in specs.iter().zip(load_specs(specs)?) {
        let aug_path = settings.augment_path(&spec.name);
        let aug = load_augmentations(&aug_path).with_context(|| {
            format!(
                "loading augmentations for {} (run `augment` first)",
                spec.name
            )
        })?;
        let fused = augment_training_set_with(
            &dataset,
            &aug,
            settings.strategy,
            settings.truncation,
            Execution::default(),
        )
        .with_context(|| format!("fusing {}", spec.name))?;
        let fallbacks = fused
            .records
            .iter()
            .filter(|r| r.extra.get("fallback_applied").and_then(|v| v.as_bool()) == Some(true))
            .count();
        let path = target(&spec.name);
        ensure_parent(&path)?;
        save_dataset(&path, &fused)?;
        log::info!(
            "fuse {} with {}: {} records, {} fallbacks -> {}",
            spec.name,
            settings.strategy,
            fused.len(),
            fallbacks,
            path.display()
        );
        written.push(path);
    }
    Ok(written)
}

/// Joins each mention's context with its description.
pub fn fuse(settings: &Settings) -> Result<Vec<PathBuf>> {
    fuse_specs(settings, &settings.datasets, |n| settings.fused_path(n))
}

/// Links fused datasets, or the original datasets when `original` is set.
pub fn link(settings: &Settings, original: bool) -> Result<Vec<PathBuf>> {
    let kb = load_kb(&settings.kb_path)?;
    let backend = build_backend(settings, &kb);
    let label = settings.run_label(original);
    let system = format!("{}+{label}", settings.backend.label());
    let mut written = Vec::new();
    for spec in &settings.datasets {
        let dataset = if original {
            load_dataset(&spec.path)?
        } else {
            let path = settings.fused_path(&spec.name);
            load_dataset(&path)
                .with_context(|| format!("loading fused {} (run `fuse` first)", spec.name))?
        };
        let mut preds = link_dataset(
            backend.as_ref(),
            &dataset,
            settings.top_k,
            Execution::default(),
            settings.max_in_flight,
        )
        .with_context(|| format!("linking {}", spec.name))?;
        preds.system = system.clone();
        let path = settings.predictions_path(&label, &spec.name);
        ensure_parent(&path)?;
        save_predictions(&path, &preds)?;
        log::info!(
            "link {} ({system}): {} mentions -> {}",
            spec.name,
            preds.len(),
            path.display()
        );
        written.push(path);
    }
    Ok(written)
}

fn load_run(
    settings: &Settings,
    label: &str,
) -> Result<(String, Vec<llmael_core::io::PredictionSet>)> {
    let mut system = None;
    let mut sets = Vec::new();
    for spec in &settings.datasets {
        let path = settings.predictions_path(label, &spec.name);
        let set = load_predictions(&path).with_context(|| {
            format!(
                "loading predictions {label}/{} (run `link` first)",
                spec.name
            )
        })?;
        if system.is_none() && !set.system.is_empty() {
            system = Some(set.system.clone());
        }
        sets.push(set);
    }
    Ok((system.unwrap_or_else(|| label.to_string()), sets))
}

fn eval_options(settings: &Settings) -> EvalOptions {
    EvalOptions {
        include_nil: settings.include_nil,
    }
}

/// Scores the given prediction runs and writes markdown and csv tables.
/// Returns the markdown.
pub fn eval(settings: &Settings, labels: &[String]) -> Result<String> {
    let labels: Vec<String> = if labels.is_empty() {
        vec![settings.run_label(false)]
    } else {
        labels.to_vec()
    };
    let gold = load_specs(&settings.datasets)?;
    let mut table = ScoreTable::new();
    for label in &labels {
        let (system, sets) = load_run(settings, label)?;
        score_datasets(&mut table, &system, &sets, &gold, eval_options(settings))?;
    }
    let stem = settings.out.join("eval").join(labels.join("+"));
    let md = emit_score_report(&table, ReportFormat::Markdown);
    write_text(&stem.with_extension("md"), &md)?;
    write_text(
        &stem.with_extension("csv"),
        &emit_score_report(&table, ReportFormat::Csv),
    )?;
    log::info!(
        "eval {}: -> {}.{{md,csv}}",
        labels.join(","),
        stem.display()
    );
    Ok(md)
}

/// Accuracy by entity frequency for one prediction run. Returns the
/// markdown table.
pub fn buckets(settings: &Settings, label: Option<&str>) -> Result<String> {
    let label = label
        .map(str::to_string)
        .unwrap_or_else(|| settings.run_label(false));
    let kb = load_kb(&settings.kb_path)?;
    let gold = load_specs(&settings.datasets)?;
    let (_, sets) = load_run(settings, &label)?;
    let report = bucket_accuracy(&sets, &gold, &kb, eval_options(settings))?;
    let stem = settings.out.join("buckets").join(&label);
    let md = emit_bucket_report(&report, ReportFormat::Markdown);
    write_text(&stem.with_extension("md"), &md)?;
    write_text(
        &stem.with_extension("csv"),
        &emit_bucket_report(&report, ReportFormat::Csv),
    )?;
    write_text(&stem.with_extension("jsonl"), &bucket_records(&report))?;
    if report.excluded_mentions > 0 {
        log::warn!(
            "buckets {label}: {} mentions of {} entities without pagerank excluded",
            report.excluded_mentions,
            report.excluded_entities
        );
    }
    Ok(md)
}

/// Augments and fuses the configured training splits for fine-tuning.
pub fn make_train(settings: &Settings) -> Result<Vec<PathBuf>> {
    let provider = build_provider(settings)?;
    make_train_with(settings, provider.as_ref())
}

pub fn make_train_with(
    settings: &Settings,
    provider: &dyn CompletionProvider,
) -> Result<Vec<PathBuf>> {
    if settings.train.is_empty() {
        bail!("no training splits configured ([[train]] entries)");
    }
    augment_specs(settings, provider, &settings.train)?;
    fuse_specs(settings, &settings.train, |n| settings.train_path(n))
}

/// Combines prediction files mention by mention.
pub fn vote(method: VoteMethod, inputs: &[PathBuf], output: &Path) -> Result<()> {
    if inputs.is_empty() {
        bail!("vote needs at least one prediction file");
    }
    let sets = inputs
        .iter()
        .map(|p| load_predictions(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let combined = vote_prediction_sets(method, &sets);
    ensure_parent(output)?;
    save_predictions(output, &combined)?;
    log::info!(
        "vote {}: {} mentions -> {}",
        combined.system,
        combined.len(),
        output.display()
    );
    Ok(())
}

/// augment, fuse, link, eval.
pub fn run(settings: &Settings) -> Result<String> {
    let provider = build_provider(settings)?;
    run_with(settings, provider.as_ref())
}

pub fn run_with(settings: &Settings, provider: &dyn CompletionProvider) -> Result<String> {
    augment_with(settings, provider)?;
    fuse(settings)?;
    link(settings, false)?;
    eval(settings, &[])
}
