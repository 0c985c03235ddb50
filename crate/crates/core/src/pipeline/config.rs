//! Run configuration: one TOML file plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ApiStyle, DEFAULT_MAX_TOKENS};
use crate::promptgen::{ExampleOrder, OrganizationConfig, OrganizationKind, RepresentationConfig, RepresentationKind, RuleKind};
use crate::selection::{PreliminarySource, SelectionConfig, Strategy, DEFAULT_TAU};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override `{key}`: {reason}")]
    Override { key: String, reason: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    /// The config key the error is about, when known.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Override { key, .. } | Self::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Spider-format `tables.json`.
    pub tables: PathBuf,
    /// Directory holding `<db_id>/<db_id>.sqlite`.
    pub db_root: PathBuf,
    /// Instances to run.
    pub instances: PathBuf,
    /// Candidate pool for example selection.
    pub pool: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationSection {
    pub kind: RepresentationKind,
    #[serde(default)]
    pub include_foreign_keys: Option<bool>,
    #[serde(default)]
    pub rule: Option<RuleKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganizationSection {
    pub kind: OrganizationKind,
    #[serde(default)]
    pub order: ExampleOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub strategy: Strategy,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub preliminary_source: PreliminarySource,
    /// JSON-lines `{instance_id, sql}` file, for `preliminary_source = "file"`.
    #[serde(default)]
    pub preliminary_file: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub cross_domain: bool,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    #[serde(default)]
    pub provider: EmbeddingKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Http,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_style: ApiStyle,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Fixture directory read by `replay`, or written when `record` is set.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub record: bool,
}

fn default_model() -> String {
    "gpt-4".into()
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_rpm() -> u32 {
    60
}

fn default_in_flight() -> usize {
    4
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::default(),
            model_id: default_model(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            endpoint: None,
            api_style: ApiStyle::default(),
            api_key_env: default_key_env(),
            requests_per_minute: default_rpm(),
            max_in_flight: default_in_flight(),
            fixtures: None,
            record: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterKind {
    #[default]
    Approx,
    Bpe,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokensSection {
    #[serde(default)]
    pub counter: CounterKind,
    #[serde(default)]
    pub merges_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default)]
    pub price_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of in-context examples (0 = zero-shot).
    pub k: usize,
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
    /// Self-consistency samples per instance (0 = off).
    #[serde(default)]
    pub self_consistency_n: usize,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_exec_timeout")]
    pub exec_timeout_secs: u64,
    pub dataset: DatasetConfig,
    pub representation: RepresentationSection,
    pub organization: OrganizationSection,
    pub selection: SelectionSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub tokens: TokensSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_context_limit() -> usize {
    4096
}

fn default_jobs() -> usize {
    4
}

fn default_exec_timeout() -> u64 {
    30
}

impl RunConfig {
    /// CR_P + DAIL selection + DAIL organization, k = 5, tau = 0.9.
    pub fn dail_sql(dataset: DatasetConfig) -> Self {
        Self {
            k: 5,
            context_limit: default_context_limit(),
            self_consistency_n: 0,
            jobs: default_jobs(),
            exec_timeout_secs: default_exec_timeout(),
            dataset,
            representation: RepresentationSection {
                kind: RepresentationKind::CodeRepresentation,
                include_foreign_keys: None,
                rule: None,
            },
            organization: OrganizationSection {
                kind: OrganizationKind::Dail,
                order: ExampleOrder::default(),
            },
            selection: SelectionSection {
                strategy: Strategy::Dail,
                tau: DEFAULT_TAU,
                seed: 0,
                preliminary_source: PreliminarySource::ZeroShotPass,
                preliminary_file: None,
                cross_domain: true,
            },
            embedding: EmbeddingSection::default(),
            backend: BackendSection::default(),
            tokens: TokensSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative dataset/output paths resolve against
    /// the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.tables);
        fix(&mut self.dataset.db_root);
        fix(&mut self.dataset.instances);
        fix(&mut self.dataset.pool);
        for p in [
            &mut self.selection.preliminary_file,
            &mut self.embedding.cache_dir,
            &mut self.backend.fixtures,
            &mut self.tokens.merges_file,
            &mut self.output.run_dir,
            &mut self.output.price_table,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: &str| {
            Err(ConfigError::Invalid {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if !(0.0..=1.0).contains(&self.selection.tau) {
            return invalid("selection.tau", "must be within [0, 1]");
        }
        if self.context_limit <= crate::promptgen::RESPONSE_RESERVE {
            return invalid("context_limit", "must exceed the 200-token response reserve");
        }
        if self.backend.temperature < 0.0 {
            return invalid("backend.temperature", "must be non-negative");
        }
        if self.jobs == 0 {
            return invalid("jobs", "must be at least 1");
        }
        if self.k > 0
            && self.selection.strategy.needs_preliminary()
            && self.selection.preliminary_source == PreliminarySource::File
            && self.selection.preliminary_file.is_none()
        {
            return invalid("selection.preliminary_file", "required when preliminary_source = \"file\"");
        }
        if self.backend.kind == BackendKind::Replay && self.backend.fixtures.is_none() {
            return invalid("backend.fixtures", "required for the replay backend");
        }
        if self.backend.record && self.backend.fixtures.is_none() {
            return invalid("backend.fixtures", "required when recording");
        }
        if self.backend.kind == BackendKind::Http && self.backend.endpoint.is_none() {
            return invalid("backend.endpoint", "required for the http backend");
        }
        if self.embedding.provider == EmbeddingKind::Http && (self.embedding.endpoint.is_none() || self.embedding.model.is_none()) {
            return invalid("embedding.endpoint", "http embeddings need endpoint and model");
        }
        if self.tokens.counter == CounterKind::Bpe && self.tokens.merges_file.is_none() {
            return invalid("tokens.merges_file", "required for the bpe counter");
        }
        Ok(())
    }

    pub fn representation_config(&self) -> RepresentationConfig {
        let mut rep = RepresentationConfig::new(self.representation.kind);
        if let Some(fk) = self.representation.include_foreign_keys {
            rep = rep.with_foreign_keys(fk);
        }
        if let Some(rule) = self.representation.rule {
            rep = rep.with_rule(rule);
        }
        rep.normalized()
    }

    pub fn organization_config(&self) -> OrganizationConfig {
        OrganizationConfig {
            kind: self.organization.kind,
            k: self.k,
            order: self.organization.order,
        }
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            strategy: self.selection.strategy,
            k: self.k,
            tau: self.selection.tau,
            seed: self.selection.seed,
            preliminary_source: self.selection.preliminary_source,
            cross_domain: self.selection.cross_domain,
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value`; the value is read as TOML, falling back to a bare
/// string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override {
        key: assignment.to_string(),
        reason: "expected key=value".into(),
    })?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override {
            key: key.to_string(),
            reason: "empty key segment".into(),
        });
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
            key: key.to_string(),
            reason: format!("`{part}` is not a table"),
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}
