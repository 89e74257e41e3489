//! Pipeline manifest: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use llmael_core::fusion::JoinStrategy;
use llmael_core::gateway::cache::CACHE_ENV;
use llmael_core::gateway::{GenerationParams, PromptKind};
use llmael_core::linker::DEFAULT_TOP_K;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{what} not found: {path}")]
    MissingPath { what: String, path: PathBuf },
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Cue/gloss file for the mock provider.
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Baseline,
    Remote,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
}

/// The file as written. Paths are relative to the file's directory.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub kb_path: PathBuf,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub train: Vec<DatasetSpec>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default = "default_prompt")]
    pub prompt: String,
    #[serde(default = "default_strategy")]
    pub strategy_id: u8,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub truncation: Option<usize>,
    pub cache: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub include_nil: bool,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_prompt() -> String {
    PromptKind::AugmentZeroShot.to_string()
}

fn default_strategy() -> u8 {
    llmael_core::fusion::DEFAULT_STRATEGY_ID
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_in_flight() -> usize {
    4
}

impl PipelineConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub strategy: Option<u8>,
    /// `baseline`, or the URL of a remote linking service.
    pub backend: Option<String>,
    pub provider: Option<String>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub top_k: Option<usize>,
    pub max_chars: Option<usize>,
    pub include_nil: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSetting {
    Mock { lexicon: Option<PathBuf> },
    Http { endpoint: String, model: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSetting {
    Baseline,
    Remote { endpoint: String },
}

impl BackendSetting {
    pub fn label(&self) -> &'static str {
        match self {
            BackendSetting::Baseline => "baseline",
            BackendSetting::Remote { .. } => "remote",
        }
    }
}

/// A validated configuration with absolute paths and overrides applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub kb_path: PathBuf,
    pub datasets: Vec<DatasetSpec>,
    pub train: Vec<DatasetSpec>,
    pub provider: ProviderSetting,
    pub params: GenerationParams,
    pub prompt: PromptKind,
    pub strategy: JoinStrategy,
    pub backend: BackendSetting,
    pub top_k: usize,
    pub truncation: Option<usize>,
    pub cache: PathBuf,
    pub out: PathBuf,
    pub include_nil: bool,
    pub max_in_flight: usize,
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require(what: &str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath {
            what: what.to_string(),
            path: path.to_path_buf(),
        })
    }
}

impl Settings {
    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let config = PipelineConfig::load(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::resolve(config, base, overrides)
    }

    /// Applies overrides and checks every invariant. `base` is the directory
    /// that relative config paths are read against.
    pub fn resolve(
        config: PipelineConfig,
        base: &Path,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let strategy_id = overrides.strategy.unwrap_or(config.strategy_id);
        let strategy = JoinStrategy::from_id(strategy_id).map_err(|_| {
            ConfigError::Invalid(format!("strategy_id must be in 0..=4, got {strategy_id}"))
        })?;
        let prompt: PromptKind = config.prompt.parse().map_err(ConfigError::Invalid)?;
        if !matches!(
            prompt,
            PromptKind::AugmentZeroShot | PromptKind::AugmentThreeShot
        ) {
            return Err(ConfigError::Invalid(format!(
                "prompt must be an augmentation prompt, got {prompt}"
            )));
        }
        config.params.validate().map_err(ConfigError::Invalid)?;

        let kb_path = rebase(base, &config.kb_path);
        require("knowledge base", &kb_path)?;
        if config.datasets.is_empty() {
            return Err(ConfigError::Invalid("no datasets configured".into()));
        }
        let mut names = std::collections::HashSet::new();
        let mut rebase_specs = |specs: Vec<DatasetSpec>| -> Result<Vec<DatasetSpec>, ConfigError> {
            specs
                .into_iter()
                .map(|s| {
                    if !names.insert(s.name.clone()) {
                        return Err(ConfigError::Invalid(format!(
                            "dataset name {:?} used twice",
                            s.name
                        )));
                    }
                    let path = rebase(base, &s.path);
                    require(&format!("dataset {}", s.name), &path)?;
                    Ok(DatasetSpec { name: s.name, path })
                })
                .collect()
        };
        let datasets = rebase_specs(config.datasets)?;
        let train = rebase_specs(config.train)?;

        let provider_kind = match overrides.provider.as_deref() {
            None => config.provider.kind,
            Some("mock") => ProviderKind::Mock,
            Some("http") => ProviderKind::Http,
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "unknown provider {other:?}; use mock or http"
                )))
            }
        };
        let provider = match provider_kind {
            ProviderKind::Mock => {
                let lexicon = config.provider.lexicon.map(|p| rebase(base, &p));
                if let Some(p) = &lexicon {
                    require("lexicon", p)?;
                }
                ProviderSetting::Mock { lexicon }
            }
            ProviderKind::Http => ProviderSetting::Http {
                endpoint: config.provider.endpoint.ok_or_else(|| {
                    ConfigError::Invalid("http provider needs provider.endpoint".into())
                })?,
                model: config.provider.model.ok_or_else(|| {
                    ConfigError::Invalid("http provider needs provider.model".into())
                })?,
            },
        };

        let backend = match overrides.backend.as_deref() {
            Some("baseline") => BackendSetting::Baseline,
            Some(url) if url.starts_with("http://") || url.starts_with("https://") => {
                BackendSetting::Remote {
                    endpoint: url.to_string(),
                }
            }
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "unknown backend {other:?}; use baseline or a service URL"
                )))
            }
            None => match config.backend.kind {
                BackendKind::Baseline => BackendSetting::Baseline,
                BackendKind::Remote => BackendSetting::Remote {
                    endpoint: config.backend.endpoint.ok_or_else(|| {
                        ConfigError::Invalid("remote backend needs backend.endpoint".into())
                    })?,
                },
            },
        };

        let top_k = overrides.top_k.unwrap_or(config.top_k);
        if top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be at least 1".into()));
        }
        let out = match &overrides.out {
            Some(p) => p.clone(),
            None => rebase(base, &config.out),
        };
        let cache = match (&overrides.cache, &config.cache) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => rebase(base, p),
            (None, None) => match std::env::var(CACHE_ENV) {
                Ok(p) if !p.is_empty() => PathBuf::from(p),
                _ => out.join("cache.jsonl"),
            },
        };

        Ok(Settings {
            kb_path,
            datasets,
            train,
            provider,
            params: config.params,
            prompt,
            strategy,
            backend,
            top_k,
            truncation: overrides.max_chars.or(config.truncation),
            cache,
            out,
            include_nil: overrides.include_nil || config.include_nil,
            max_in_flight: config.max_in_flight.max(1),
        })
    }

    pub fn augment_path(&self, dataset: &str) -> PathBuf {
        self.out.join("augment").join(format!("{dataset}.jsonl"))
    }

    pub fn fused_path(&self, dataset: &str) -> PathBuf {
        self.out
            .join("fused")
            .join(self.strategy.to_string())
            .join(format!("{dataset}.jsonl"))
    }

    /// Label of a prediction run: the strategy, or `original` when linking
    /// unaugmented contexts.
    pub fn run_label(&self, original: bool) -> String {
        if original {
            "original".into()
        } else {
            self.strategy.to_string()
        }
    }

    pub fn predictions_path(&self, label: &str, dataset: &str) -> PathBuf {
        self.out
            .join("predictions")
            .join(label)
            .join(format!("{dataset}.jsonl"))
    }

    pub fn train_path(&self, dataset: &str) -> PathBuf {
        self.out
            .join("train")
            .join(self.strategy.to_string())
            .join(format!("{dataset}.jsonl"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("kb.jsonl"), "").unwrap();
        std::fs::write(dir.path().join("a.jsonl"), "").unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(
            &cfg,
            "kb_path = \"kb.jsonl\"\n[[datasets]]\nname = \"a\"\npath = \"a.jsonl\"\n",
        )
        .unwrap();
        (dir, cfg)
    }

    #[test]
    fn defaults_and_relative_paths() {
        let (dir, cfg) = fixture();
        let s = Settings::from_file(&cfg, &Overrides::default()).unwrap();
        assert_eq!(s.strategy.id(), 4);
        assert_eq!(s.top_k, 10);
        assert_eq!(s.params, GenerationParams::default());
        assert_eq!(s.prompt, PromptKind::AugmentZeroShot);
        assert_eq!(s.datasets[0].path, dir.path().join("a.jsonl"));
        assert_eq!(s.out, dir.path().join("out"));
        assert_eq!(s.backend, BackendSetting::Baseline);
        assert_eq!(s.provider, ProviderSetting::Mock { lexicon: None });
        assert_eq!(s.fused_path("a"), dir.path().join("out/fused/s4/a.jsonl"));
    }

    #[test]
    fn overrides_win() {
        let (_dir, cfg) = fixture();
        let o = Overrides {
            strategy: Some(1),
            backend: Some("http://localhost:9000".into()),
            top_k: Some(3),
            max_chars: Some(512),
            include_nil: true,
            out: Some(PathBuf::from("/tmp/x")),
            ..Default::default()
        };
        let s = Settings::from_file(&cfg, &o).unwrap();
        assert_eq!(s.strategy.id(), 1);
        assert_eq!(
            s.backend,
            BackendSetting::Remote {
                endpoint: "http://localhost:9000".into()
            }
        );
        assert_eq!((s.top_k, s.truncation, s.include_nil), (3, Some(512), true));
        assert_eq!(s.cache, PathBuf::from("/tmp/x/cache.jsonl"));
    }

    #[test]
    fn rejects_bad_values() {
        let (dir, cfg) = fixture();
        let bad = Overrides {
            strategy: Some(5),
            ..Default::default()
        };
        assert!(matches!(
            Settings::from_file(&cfg, &bad),
            Err(ConfigError::Invalid(_))
        ));
        let http = Overrides {
            provider: Some("http".into()),
            ..Default::default()
        };
        assert!(matches!(
            Settings::from_file(&cfg, &http),
            Err(ConfigError::Invalid(_))
        ));
        std::fs::remove_file(dir.path().join("a.jsonl")).unwrap();
        assert!(matches!(
            Settings::from_file(&cfg, &Overrides::default()),
            Err(ConfigError::MissingPath { .. })
        ));
        let typo = dir.path().join("t.toml");
        std::fs::write(
            &typo,
            "kb_path = \"kb.jsonl\"\ndatasets = []\nstrategy = 2\n",
        )
        .unwrap();
        assert!(matches!(
            Settings::from_file(&typo, &Overrides::default()),
            Err(ConfigError::Parse { .. })
        ));
    }
}
