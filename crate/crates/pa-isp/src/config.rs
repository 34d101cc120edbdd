//! TOML pipeline configuration: provider bindings per stage, artifact
//! paths, and run settings. Loading validates everything up front so a bad
//! config fails before any request is sent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{
    load_transcript, stage, Gateway, GatewayError, HashEmbedder, RemoteChatProvider,
    RemoteEmbeddingProvider, RemoteProviderConfig, RetryPolicy,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config '{path}': {message}")]
    Parse { path: String, message: String },
    #[error("config error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Provider slot names accepted under `[providers.<slot>]`. The four chat
/// stages, the `"*"` fallback, and the embedding slot.
pub const PROVIDER_SLOTS: [&str; 6] =
    [stage::PROMPT_INIT, stage::SUMMARIZE, stage::REFLECT, stage::REFINE, "*", "embedding"];

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// OpenAI-compatible HTTP endpoint, chat or embeddings depending on slot.
    OpenaiChat {
        endpoint: String,
        model: String,
        credential_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        max_input_chars: Option<usize>,
        /// Required for the embedding slot, ignored for chat slots.
        dim: Option<usize>,
    },
    /// Scripted replies from a JSON file, for offline and test runs.
    Transcript { path: PathBuf },
    /// Deterministic seeded embedder; valid only for the embedding slot.
    Hash { seed: u64, dim: usize },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    pub prompts: PathBuf,
    pub index: PathBuf,
    pub runs: PathBuf,
    pub predictions: PathBuf,
}

fn default_epochs() -> u32 {
    crate::engine::DEFAULT_EPOCHS
}

fn default_worst_k() -> usize {
    crate::engine::DEFAULT_WORST_K
}

fn default_k_retrieval() -> usize {
    crate::retrieval::DEFAULT_TOP_K
}

fn default_concurrency() -> usize {
    1
}

fn default_seed() -> u64 {
    42
}

fn default_plateau_delta() -> f64 {
    crate::engine::DEFAULT_PLATEAU_DELTA
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_worst_k")]
    pub worst_k: usize,
    #[serde(default = "default_k_retrieval")]
    pub k_retrieval: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_plateau_delta")]
    pub plateau_delta: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            epochs: default_epochs(),
            worst_k: default_worst_k(),
            k_retrieval: default_k_retrieval(),
            concurrency: default_concurrency(),
            seed: default_seed(),
            plateau_delta: default_plateau_delta(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderSpec>,
    pub paths: PathsConfig,
    #[serde(default)]
    pub run: RunSettings,
}

impl PipelineConfig {
    /// Parse and validate a config file. Relative paths (artifact paths and
    /// transcript files) are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut config: PipelineConfig = toml::from_str(&raw)
            .map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.paths.manifest);
        resolve(&mut self.paths.prompts);
        resolve(&mut self.paths.index);
        resolve(&mut self.paths.runs);
        resolve(&mut self.paths.predictions);
        for spec in self.providers.values_mut() {
            if let ProviderSpec::Transcript { path } = spec {
                resolve(path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (slot, spec) in &self.providers {
            if !PROVIDER_SLOTS.contains(&slot.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "unknown provider slot '{slot}' (expected one of {})",
                    PROVIDER_SLOTS.join(", ")
                )));
            }
            match spec {
                ProviderSpec::OpenaiChat { endpoint, model, dim, .. } => {
                    if endpoint.trim().is_empty() || model.trim().is_empty() {
                        return Err(ConfigError::Invalid(format!(
                            "provider '{slot}': endpoint and model must be non-empty"
                        )));
                    }
                    if slot == "embedding" && dim.map_or(true, |d| d == 0) {
                        return Err(ConfigError::Invalid(
                            "provider 'embedding': openai_chat embedding needs dim > 0".into(),
                        ));
                    }
                }
                ProviderSpec::Transcript { path } => {
                    if slot == "embedding" {
                        return Err(ConfigError::Invalid(
                            "provider 'embedding': transcripts only script chat stages".into(),
                        ));
                    }
                    if !path.is_file() {
                        return Err(ConfigError::Invalid(format!(
                            "provider '{slot}': transcript '{}' does not exist",
                            path.display()
                        )));
                    }
                }
                ProviderSpec::Hash { dim, .. } => {
                    if slot != "embedding" {
                        return Err(ConfigError::Invalid(format!(
                            "provider '{slot}': hash embedder is only valid for the embedding slot"
                        )));
                    }
                    if *dim == 0 {
                        return Err(ConfigError::Invalid(
                            "provider 'embedding': dim must be positive".into(),
                        ));
                    }
                }
            }
        }
        if !self.providers.contains_key("embedding") {
            return Err(ConfigError::Invalid(
                "missing [providers.embedding] (kind = \"hash\" works offline)".into(),
            ));
        }
        let has_chat = self.providers.keys().any(|k| k != "embedding");
        if !has_chat {
            return Err(ConfigError::Invalid(
                "no chat provider bound; add [providers.\"*\"] or per-stage providers".into(),
            ));
        }
        let r = &self.run;
        if r.epochs == 0 || r.worst_k == 0 || r.k_retrieval == 0 || r.concurrency == 0 {
            return Err(ConfigError::Invalid(
                "run.epochs, run.worst_k, run.k_retrieval, run.concurrency must be positive"
                    .into(),
            ));
        }
        if !(r.plateau_delta >= 0.0) {
            return Err(ConfigError::Invalid("run.plateau_delta must be >= 0".into()));
        }
        Ok(())
    }

    /// Construct the gateway described by this config: every chat slot
    /// bound, the embedding slot installed, retries and the concurrency cap
    /// applied.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut builder = Gateway::builder()
            .retry(RetryPolicy::default())
            .concurrency_cap(self.run.concurrency);
        for (slot, spec) in &self.providers {
            if slot == "embedding" {
                continue;
            }
            let provider: Arc<dyn crate::gateway::ChatProvider> = match spec {
                ProviderSpec::Transcript { path } => Arc::new(load_transcript(path)?),
                ProviderSpec::OpenaiChat {
                    endpoint,
                    model,
                    credential_env,
                    timeout_secs,
                    max_input_chars,
                    ..
                } => Arc::new(RemoteChatProvider::new(RemoteProviderConfig {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    credential_env: credential_env.clone(),
                    timeout_secs: *timeout_secs,
                    max_input_chars: *max_input_chars,
                })?),
                ProviderSpec::Hash { .. } => unreachable!("rejected by validate"),
            };
            builder = builder.bind(slot, provider);
        }
        let embedding = self.providers.get("embedding").expect("checked by validate");
        let embedder: Arc<dyn crate::gateway::EmbeddingProvider> = match embedding {
            ProviderSpec::Hash { seed, dim } => Arc::new(HashEmbedder::new(*seed, *dim)),
            ProviderSpec::OpenaiChat {
                endpoint,
                model,
                credential_env,
                timeout_secs,
                max_input_chars,
                dim,
            } => Arc::new(RemoteEmbeddingProvider::new(
                RemoteProviderConfig {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    credential_env: credential_env.clone(),
                    timeout_secs: *timeout_secs,
                    max_input_chars: *max_input_chars,
                },
                dim.expect("checked by validate"),
            )?),
            ProviderSpec::Transcript { .. } => unreachable!("rejected by validate"),
        };
        Ok(builder.embedder(embedder).build())
    }
}
