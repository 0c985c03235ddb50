//! Record/replay of completions as append-only JSON-lines fixtures.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CompletionRequest, CompletionResponse, LlmError};

/// Name of the fixture file inside a fixture directory.
pub const FIXTURE_FILE: &str = "completions.jsonl";

/// sha256 over model id, prompt, temperature and max_tokens, plus the
/// sample index for self-consistency samples.
pub fn fixture_key(req: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    for part in [
        req.model_id.as_bytes(),
        req.prompt.as_bytes(),
        format!("{:?}", req.temperature).as_bytes(),
        req.max_tokens.to_string().as_bytes(),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    if req.sample_index > 0 {
        h.update(b"sample");
        h.update(req.sample_index.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub sample_index: u32,
    pub instance_id: Option<String>,
    pub prompt_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key_hash: String,
    pub request_summary: RequestSummary,
    pub response_text: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

fn fixture_path(dir_or_file: &Path) -> PathBuf {
    if dir_or_file.extension().is_some_and(|e| e == "jsonl") {
        dir_or_file.to_path_buf()
    } else {
        dir_or_file.join(FIXTURE_FILE)
    }
}

fn fixture_err(path: &Path, reason: impl ToString) -> LlmError {
    LlmError::Fixture {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Serves recorded responses; a request without a record is an error.
pub struct ReplayBackend {
    records: HashMap<String, FixtureRecord>,
}

impl ReplayBackend {
    /// Loads `completions.jsonl` from a directory, or a `.jsonl` file
    /// directly. Later records override earlier ones with the same key.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let file = fixture_path(path);
        let f = File::open(&file).map_err(|e| fixture_err(&file, e))?;
        let mut records = HashMap::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| fixture_err(&file, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| fixture_err(&file, format!("line {}: {e}", n + 1)))?;
            records.insert(rec.key_hash.clone(), rec);
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn label(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let key = fixture_key(request);
        let rec = self.records.get(&key).ok_or(LlmError::FixtureMiss(key))?;
        Ok(CompletionResponse {
            text: rec.response_text.clone(),
            prompt_tokens: rec.prompt_tokens,
            completion_tokens: rec.completion_tokens,
            backend: "replay".into(),
            latency: Duration::ZERO,
        })
    }
}

/// Passes requests to `inner` and appends every response to a fixture file.
pub struct RecordingBackend<B> {
    inner: B,
    label: String,
    out: Mutex<File>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, path: &Path) -> Result<Self, LlmError> {
        let file = fixture_path(path);
        if let Some(parent) = file.parent() {
            fs::create_dir_all(parent).map_err(|e| fixture_err(parent, e))?;
        }
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&file)
            .map_err(|e| fixture_err(&file, e))?;
        Ok(Self {
            label: format!("record:{}", inner.label()),
            inner,
            out: Mutex::new(out),
        })
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn label(&self) -> &str {
        &self.label
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let resp = self.inner.complete(request)?;
        let rec = FixtureRecord {
            key_hash: fixture_key(request),
            request_summary: RequestSummary {
                model_id: request.model_id.clone(),
                temperature: request.temperature,
                max_tokens: request.max_tokens,
                sample_index: request.sample_index,
                instance_id: request.instance_id.clone(),
                prompt_chars: request.prompt.chars().count(),
            },
            response_text: resp.text.clone(),
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
        };
        let mut line = serde_json::to_string(&rec).expect("records serialize");
        line.push('\n');
        let mut f = self.out.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())
            .map_err(|e| LlmError::Fixture { path: FIXTURE_FILE.into(), reason: e.to_string() })?;
        Ok(resp)
    }
}
