//! LLM access: prompt construction, cached generation, dataset
//! augmentation and answer parsing.

pub mod cache;
pub mod parse;
pub mod prompts;
pub mod provider;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::{AugmentationRecord, AugmentationSet, IoError};
use crate::model::{Dataset, MentionKey};
use crate::par::{self, Execution};

pub use cache::{CacheEntry, CompletionCache};
pub use parse::{parse_direct_el_answer, parse_rerank_answer};
pub use prompts::{
    build_augment_prompt, build_direct_el_prompt, build_rerank_prompt, PromptError, RerankCandidate,
};
pub use provider::{CompletionProvider, HttpProvider, MockProvider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub extra: BTreeMap<String, String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_tokens: 150,
            temperature: 0.01,
            extra: BTreeMap::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_tokens < 1 {
            return Err("max_tokens must be at least 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    AugmentZeroShot,
    AugmentThreeShot,
    DirectEL,
    Rerank100,
    Rerank10,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PromptKind::AugmentZeroShot => "zero-shot",
            PromptKind::AugmentThreeShot => "three-shot",
            PromptKind::DirectEL => "direct-el",
            PromptKind::Rerank100 => "rerank-100",
            PromptKind::Rerank10 => "rerank-10",
        };
        f.write_str(s)
    }
}

impl FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-shot" => Ok(PromptKind::AugmentZeroShot),
            "three-shot" => Ok(PromptKind::AugmentThreeShot),
            "direct-el" => Ok(PromptKind::DirectEL),
            "rerank-100" => Ok(PromptKind::Rerank100),
            "rerank-10" => Ok(PromptKind::Rerank10),
            other => Err(format!("unknown prompt kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
    pub provider: String,
    pub fingerprint: String,
}

/// SHA-256 over provider, model, prompt and generation parameters.
pub fn fingerprint(provider: &str, model: &str, prompt: &str, params: &GenerationParams) -> String {
    let canonical = serde_json::json!([
        provider,
        model,
        prompt,
        params.max_tokens,
        params.temperature,
        params.extra
    ]);
    let mut hasher = Sha256::new();
    hasher.update(canonical.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Retries without sleeping.
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff: Duration::ZERO,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("provider unavailable after {attempts} attempts: {detail}")]
    ProviderUnavailable { attempts: u32, detail: String },
    #[error("provider rejected the request: {0}")]
    ProviderRejected(String),
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cache write failed: {0}")]
    Cache(#[from] IoError),
}

/// A provider, its cache and the transport settings used with them.
pub struct Gateway<'a> {
    provider: &'a dyn CompletionProvider,
    cache: &'a CompletionCache,
    retry: RetryPolicy,
    max_in_flight: usize,
    exec: Execution,
}

impl<'a> Gateway<'a> {
    pub fn new(provider: &'a dyn CompletionProvider, cache: &'a CompletionCache) -> Self {
        Gateway {
            provider,
            cache,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            exec: Execution::default(),
        }
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn fingerprint(&self, prompt: &str, params: &GenerationParams) -> String {
        fingerprint(self.provider.name(), self.provider.model(), prompt, params)
    }

    fn call_provider(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<String, GenerateError> {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.provider.complete(prompt, params) {
                Ok(text) => return Ok(text),
                Err(ProviderError::Rejected(detail)) => {
                    return Err(GenerateError::ProviderRejected(detail))
                }
                Err(ProviderError::Unavailable(detail)) => {
                    log::warn!("provider attempt {attempt}/{attempts} failed: {detail}");
                    last = detail;
                    if attempt < attempts && !backoff.is_zero() {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GenerateError::ProviderUnavailable {
            attempts,
            detail: last,
        })
    }

    /// Cached completion. A hit never reaches the provider; a miss is
    /// generated, stored, and returned with `cached == false`.
    pub fn generate(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Completion, GenerateError> {
        let fp = self.fingerprint(prompt, params);
        let label = self.provider.label();
        if let Some(text) = self.cache.get(&fp) {
            return Ok(Completion {
                text,
                cached: true,
                provider: label,
                fingerprint: fp,
            });
        }
        let text = self.call_provider(prompt, params)?;
        let text = self.store(&fp, text)?;
        Ok(Completion {
            text,
            cached: false,
            provider: label,
            fingerprint: fp,
        })
    }

    fn store(&self, fp: &str, text: String) -> Result<String, GenerateError> {
        if text.trim().is_empty() {
            return Err(GenerateError::EmptyCompletion);
        }
        self.cache.put(CacheEntry {
            fingerprint: fp.to_string(),
            provider: self.provider.label(),
            description: text.clone(),
        })?;
        Ok(text)
    }

    /// Generates one description per mention, in dataset order.
    ///
    /// Distinct prompts are sent at most once; failures are collected and
    /// the affected mentions left out of the set.
    pub fn augment_dataset(
        &self,
        dataset: &Dataset,
        kind: PromptKind,
        params: &GenerationParams,
    ) -> AugmentOutcome {
        let label = self.provider.label();
        let mut failures = Vec::new();
        let mut prompts: Vec<Option<(String, String)>> = Vec::with_capacity(dataset.len());
        for mc in &dataset.records {
            match build_augment_prompt(mc, kind) {
                Ok(prompt) => {
                    let fp = self.fingerprint(&prompt, params);
                    prompts.push(Some((prompt, fp)));
                }
                Err(e) => {
                    failures.push(AugmentFailure {
                        key: mc.key(),
                        error: e.to_string(),
                    });
                    prompts.push(None);
                }
            }
        }

        let mut pending: Vec<(&str, &str)> = Vec::new();
        let mut queued = std::collections::HashSet::new();
        for (prompt, fp) in prompts.iter().flatten() {
            if !self.cache.contains(fp) && queued.insert(fp.as_str()) {
                pending.push((prompt.as_str(), fp.as_str()));
            }
        }
        let cache_hits = prompts.iter().flatten().count() - pending.len();

        // Provider calls run concurrently; cache writes happen afterwards in
        // dataset order so the cache file is reproducible.
        let results = par::map_bounded(self.exec, self.max_in_flight, &pending, |(prompt, _)| {
            self.call_provider(prompt, params)
        });
        let mut errors: HashMap<&str, String> = HashMap::new();
        for ((_, fp), result) in pending.iter().zip(results) {
            if let Err(e) = result.and_then(|text| self.store(fp, text)) {
                errors.insert(fp, e.to_string());
            }
        }
        let generated = pending.len() - errors.len();

        let mut set = AugmentationSet::new(label.clone(), params.clone());
        for (mc, entry) in dataset.records.iter().zip(&prompts) {
            let Some((_, fp)) = entry else { continue };
            match self.cache.get(fp) {
                Some(text) => {
                    set.insert(AugmentationRecord::new(mc, label.clone(), text));
                }
                None => failures.push(AugmentFailure {
                    key: mc.key(),
                    error: errors
                        .get(fp.as_str())
                        .cloned()
                        .unwrap_or_else(|| "no completion".into()),
                }),
            }
        }
        AugmentOutcome {
            set,
            failures,
            generated,
            cache_hits,
        }
    }
}

/// Convenience wrapper around [`Gateway::generate`] with default transport
/// settings.
pub fn generate(
    provider: &dyn CompletionProvider,
    prompt: &str,
    params: &GenerationParams,
    cache: &CompletionCache,
) -> Result<Completion, GenerateError> {
    Gateway::new(provider, cache).generate(prompt, params)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentFailure {
    pub key: MentionKey,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub set: AugmentationSet,
    pub failures: Vec<AugmentFailure>,
    /// Fresh completions obtained from the provider.
    pub generated: usize,
    /// Mentions served from the cache without a provider call.
    pub cache_hits: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MentionContext;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Counts calls and fails on prompts mentioning a poisoned surface.
    struct Counting {
        inner: MockProvider,
        calls: AtomicUsize,
        poison: Option<&'static str>,
    }

    impl Counting {
        fn new(poison: Option<&'static str>) -> Self {
            Counting {
                inner: MockProvider::new(),
                calls: AtomicUsize::new(0),
                poison,
            }
        }
        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl CompletionProvider for Counting {
        fn name(&self) -> &str {
            "mock"
        }
        fn model(&self) -> &str {
            self.inner.model()
        }
        fn complete(
            &self,
            prompt: &str,
            params: &GenerationParams,
        ) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if let Some(p) = self.poison {
                if prompt.ends_with(&format!("include {p} in your description.\nAnswer:")) {
                    return Err(ProviderError::Unavailable("boom".into()));
                }
            }
            self.inner.complete(prompt, params)
        }
    }

    fn dataset() -> Dataset {
        Dataset::new(
            "toy",
            vec![
                MentionContext::locate("d1", "He visited Paris last week.", "Paris", "Q90")
                    .unwrap(),
                MentionContext::locate("d2", "Jordan scored again.", "Jordan", "Q41421").unwrap(),
                MentionContext::locate("d3", "Apple sold phones.", "Apple", "Q312").unwrap(),
            ],
        )
    }

    #[test]
    fn defaults() {
        let p = GenerationParams::default();
        assert_eq!(p.max_tokens, 150);
        assert_eq!(p.temperature, 0.01);
        assert!(p.validate().is_ok());
        assert!(GenerationParams {
            max_tokens: 0,
            ..p.clone()
        }
        .validate()
        .is_err());
        assert_eq!(RetryPolicy::default().attempts, 3);
        assert_eq!(
            RetryPolicy::default().initial_backoff,
            Duration::from_secs(1)
        );
    }

    #[test]
    fn fingerprint_depends_on_every_input() {
        let p = GenerationParams::default();
        let base = fingerprint("mock", "echo", "hi", &p);
        assert_eq!(base, fingerprint("mock", "echo", "hi", &p));
        assert_ne!(base, fingerprint("http", "echo", "hi", &p));
        assert_ne!(base, fingerprint("mock", "echo2", "hi", &p));
        assert_ne!(base, fingerprint("mock", "echo", "hi!", &p));
        let hot = GenerationParams {
            temperature: 0.0,
            ..p
        };
        assert_ne!(base, fingerprint("mock", "echo", "hi", &hot));
    }

    #[test]
    fn second_call_is_cached() {
        let provider = Counting::new(None);
        let cache = CompletionCache::in_memory();
        let prompt =
            build_augment_prompt(&dataset().records[0], PromptKind::AugmentZeroShot).unwrap();
        let a = generate(&provider, &prompt, &GenerationParams::default(), &cache).unwrap();
        let b = generate(&provider, &prompt, &GenerationParams::default(), &cache).unwrap();
        assert!(!a.cached && b.cached);
        assert_eq!(a.text, b.text);
        assert!(a.text.contains("Paris"));
        assert_eq!(provider.calls(), 1);
    }

    #[test]
    fn unavailable_after_bounded_retries() {
        struct Down(AtomicUsize);
        impl CompletionProvider for Down {
            fn name(&self) -> &str {
                "down"
            }
            fn model(&self) -> &str {
                "x"
            }
            fn complete(&self, _: &str, _: &GenerationParams) -> Result<String, ProviderError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Err(ProviderError::Unavailable("connection refused".into()))
            }
        }
        let down = Down(AtomicUsize::new(0));
        let cache = CompletionCache::in_memory();
        let err = Gateway::new(&down, &cache)
            .retry(RetryPolicy::immediate(3))
            .generate("p", &GenerationParams::default())
            .unwrap_err();
        assert!(matches!(
            err,
            GenerateError::ProviderUnavailable { attempts: 3, .. }
        ));
        assert_eq!(down.0.load(Ordering::SeqCst), 3);
        assert!(cache.is_empty());
    }

    #[test]
    fn empty_completion_is_an_error() {
        struct Blank;
        impl CompletionProvider for Blank {
            fn name(&self) -> &str {
                "blank"
            }
            fn model(&self) -> &str {
                "x"
            }
            fn complete(&self, _: &str, _: &GenerationParams) -> Result<String, ProviderError> {
                Ok("  ".into())
            }
        }
        let cache = CompletionCache::in_memory();
        let err = generate(&Blank, "p", &GenerationParams::default(), &cache).unwrap_err();
        assert!(matches!(err, GenerateError::EmptyCompletion));
    }

    #[test]
    fn augment_whole_dataset_in_order() {
        let provider = Counting::new(None);
        let cache = CompletionCache::in_memory();
        let gw = Gateway::new(&provider, &cache);
        let out = gw.augment_dataset(
            &dataset(),
            PromptKind::AugmentThreeShot,
            &GenerationParams::default(),
        );
        assert_eq!(out.set.len(), 3);
        assert!(out.failures.is_empty());
        let docs: Vec<_> = out.set.records.keys().map(|k| k.doc_id.as_str()).collect();
        assert_eq!(docs, ["d1", "d2", "d3"]);
        assert_eq!(out.generated, 3);

        let again = gw.augment_dataset(
            &dataset(),
            PromptKind::AugmentThreeShot,
            &GenerationParams::default(),
        );
        assert_eq!(again.set, out.set);
        assert_eq!(again.cache_hits, 3);
        assert_eq!(provider.calls(), 3);
    }

    #[test]
    fn partial_failure_does_not_abort() {
        let provider = Counting::new(Some("Jordan"));
        let cache = CompletionCache::in_memory();
        let out = Gateway::new(&provider, &cache)
            .retry(RetryPolicy::immediate(2))
            .augment_dataset(
                &dataset(),
                PromptKind::AugmentZeroShot,
                &GenerationParams::default(),
            );
        assert_eq!(out.set.len(), 2);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].key.doc_id, "d2");
        assert!(out.failures[0].error.contains("unavailable"));
    }

    #[test]
    fn duplicate_prompts_call_provider_once() {
        let mut records = dataset().records;
        let mut twin = records[0].clone();
        twin.doc_id = "d1-copy".into();
        records.push(twin);
        let provider = Counting::new(None);
        let cache = CompletionCache::in_memory();
        let out = Gateway::new(&provider, &cache).augment_dataset(
            &Dataset::new("t", records),
            PromptKind::AugmentZeroShot,
            &GenerationParams::default(),
        );
        assert_eq!(out.set.len(), 4);
        assert_eq!(provider.calls(), 3);
    }
}
