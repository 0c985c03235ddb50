//! LLM backends and self-consistency voting.

mod fixture;
mod http;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Schema;
use crate::eval::{execute_query, results_match, Row};
use crate::promptgen::TokenCounter;
use crate::sqlkit::extract_first_sql;

pub use fixture::{fixture_key, FixtureRecord, RecordingBackend, ReplayBackend, RequestSummary};
pub use http::{ApiStyle, HttpBackend, HttpBackendConfig};

pub const DEFAULT_MAX_TOKENS: usize = 200;
pub const SELF_CONSISTENCY_TEMPERATURE: f64 = 1.0;
pub const SELF_CONSISTENCY_N: usize = 5;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("completion request failed: {0}")]
    Transport(String),
    #[error("no fixture for request {0}")]
    FixtureMiss(String),
    #[error("fixture file {path}: {reason}")]
    Fixture { path: String, reason: String },
    #[error("oracle backend has no gold query for instance {0:?}")]
    UnknownInstance(Option<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub model_id: String,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// 0 for ordinary calls; 1..=n for self-consistency samples.
    #[serde(default)]
    pub sample_index: u32,
    /// Used by offline backends only; never part of the fixture key.
    #[serde(default)]
    pub instance_id: Option<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_id: model_id.into(),
            stop_sequences: Vec::new(),
            sample_index: 0,
            instance_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub backend: String,
    pub latency: Duration,
}

pub trait Backend: Send + Sync {
    fn label(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn label(&self) -> &str {
        (**self).label()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Answers every request with the gold query of `request.instance_id`.
pub struct OracleBackend {
    gold: HashMap<String, String>,
    counter: Arc<dyn TokenCounter>,
}

impl OracleBackend {
    pub fn new(gold: impl IntoIterator<Item = (String, String)>, counter: Arc<dyn TokenCounter>) -> Self {
        Self {
            gold: gold.into_iter().collect(),
            counter,
        }
    }
}

impl Backend for OracleBackend {
    fn label(&self) -> &str {
        "oracle"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let text = request
            .instance_id
            .as_ref()
            .and_then(|id| self.gold.get(id))
            .ok_or_else(|| LlmError::UnknownInstance(request.instance_id.clone()))?
            .clone();
        Ok(CompletionResponse {
            prompt_tokens: self.counter.count(&request.prompt),
            completion_tokens: self.counter.count(&text),
            text,
            backend: "oracle".into(),
            latency: Duration::ZERO,
        })
    }
}

type Responder = dyn Fn(&CompletionRequest) -> String + Send + Sync;

/// Offline backend answering from a caller-supplied function.
pub struct CannedBackend {
    respond: Box<Responder>,
    counter: Arc<dyn TokenCounter>,
}

impl CannedBackend {
    pub fn new(counter: Arc<dyn TokenCounter>, respond: impl Fn(&CompletionRequest) -> String + Send + Sync + 'static) -> Self {
        Self {
            respond: Box::new(respond),
            counter,
        }
    }

    /// Fixed responses per (instance id, sample index), with a fallback.
    pub fn from_table(counter: Arc<dyn TokenCounter>, table: HashMap<(String, u32), String>, fallback: String) -> Self {
        Self::new(counter, move |req| {
            req.instance_id
                .as_ref()
                .and_then(|id| table.get(&(id.clone(), req.sample_index)))
                .cloned()
                .unwrap_or_else(|| fallback.clone())
        })
    }
}

impl Backend for CannedBackend {
    fn label(&self) -> &str {
        "canned"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let text = (self.respond)(request);
        Ok(CompletionResponse {
            prompt_tokens: self.counter.count(&request.prompt),
            completion_tokens: self.counter.count(&text),
            text,
            backend: "canned".into(),
            latency: Duration::ZERO,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    /// Index (issuance order) of the returned candidate.
    pub chosen: usize,
    /// Size of the winning group.
    pub support: usize,
    /// No candidate executed; the first one is returned.
    pub all_failed: bool,
}

/// Majority vote over execution results (`None` = did not execute).
///
/// Candidates with matching results form a group; an unexecutable
/// candidate is a singleton. The largest group wins, executable groups win
/// ties against unexecutable singletons, remaining ties go to the group
/// whose first member was issued earliest. The first member is returned.
pub fn vote(results: &[Option<Vec<Row>>]) -> Vote {
    assert!(!results.is_empty(), "vote needs at least one candidate");
    let mut leader_of: Vec<usize> = (0..results.len()).collect();
    for i in 0..results.len() {
        if let Some(ri) = &results[i] {
            if let Some(j) = (0..i).find(|&j| leader_of[j] == j && results[j].as_ref().is_some_and(|rj| results_match(rj, ri, false))) {
                leader_of[i] = j;
            }
        }
    }
    let mut best: Option<(usize, bool, usize)> = None;
    for leader in (0..results.len()).filter(|&i| leader_of[i] == i) {
        let size = leader_of.iter().filter(|&&l| l == leader).count();
        let executable = results[leader].is_some();
        let better = match best {
            None => true,
            Some((bs, be, _)) => (size, executable) > (bs, be),
        };
        if better {
            best = Some((size, executable, leader));
        }
    }
    let (support, executable, chosen) = best.expect("non-empty");
    Vote {
        chosen,
        support,
        all_failed: !executable,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfConsistencyOutcome {
    pub sql: String,
    pub chosen: usize,
    pub candidates: Vec<String>,
    pub all_failed: bool,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub latency: Duration,
}

/// Samples `n` completions at temperature 1.0, executes each extracted
/// query on the schema's database, and returns the vote winner.
pub fn self_consistency(
    base: &CompletionRequest,
    ends_with_select: bool,
    n: usize,
    backend: &dyn Backend,
    schema: &Schema,
    timeout: Duration,
) -> Result<SelfConsistencyOutcome, LlmError> {
    let n = n.max(1);
    let mut candidates = Vec::with_capacity(n);
    let mut results = Vec::with_capacity(n);
    let (mut prompt_tokens, mut completion_tokens, mut latency) = (0, 0, Duration::ZERO);
    for i in 0..n {
        let mut req = base.clone();
        req.temperature = SELF_CONSISTENCY_TEMPERATURE;
        req.sample_index = i as u32 + 1;
        let resp = backend.complete(&req)?;
        prompt_tokens += resp.prompt_tokens;
        completion_tokens += resp.completion_tokens;
        latency += resp.latency;
        let sql = extract_first_sql(&resp.text, ends_with_select).unwrap_or_default();
        let rows = if sql.is_empty() {
            None
        } else {
            execute_query(&schema.db_file_path, &sql, timeout).ok()
        };
        candidates.push(sql);
        results.push(rows);
    }
    let v = vote(&results);
    Ok(SelfConsistencyOutcome {
        sql: candidates[v.chosen].clone(),
        chosen: v.chosen,
        candidates,
        all_failed: v.all_failed,
        prompt_tokens,
        completion_tokens,
        latency,
    })
}
