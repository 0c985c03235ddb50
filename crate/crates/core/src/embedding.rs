//! Sentence embeddings and cosine ranking.
//!
//! Providers: a deterministic hashed bag-of-words (`HashProvider`), an
//! HTTP provider for an external sentence encoder, and a content-addressed
//! disk cache that wraps either.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::transport::{classify_ureq, ConcurrencyLimiter, RetryPolicy, Sleeper, ThreadSleeper};

pub const HASH_DIM: usize = 256;
pub const HASH_MODEL_ID: &str = "hash-bow-256";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding response malformed: {0}")]
    Malformed(String),
    #[error("embedding vectors disagree: {0}")]
    Mismatch(String),
    #[error("embedding cache error at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = self.embed_batch(&[text.to_string()])?;
        v.pop()
            .ok_or_else(|| EmbeddingError::Malformed("empty batch response".into()))
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Tokens for the hash provider: lowercased ASCII alphanumeric runs, with
/// `<mask>` and `<unk>` kept whole.
pub fn hash_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        if let Some(special) = ["<mask>", "<unk>"].into_iter().find(|s| rest.starts_with(s)) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(special.to_string());
            rest = &rest[special.len()..];
            continue;
        }
        if c.is_ascii_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        rest = &rest[c.len_utf8()..];
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Hashed bag-of-words: each token adds 1 to bucket `fnv1a(token) % 256`,
/// then the vector is L2-normalized. Empty text maps to the zero vector.
#[derive(Debug, Default, Clone, Copy)]
pub struct HashProvider;

impl HashProvider {
    pub fn vector(text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; HASH_DIM];
        for tok in hash_tokens(text) {
            values[(fnv1a(tok.as_bytes()) % HASH_DIM as u64) as usize] += 1.0;
        }
        let norm = values.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector {
            values,
            model_id: HASH_MODEL_ID.to_string(),
        }
    }
}

impl EmbeddingProvider for HashProvider {
    fn model_id(&self) -> &str {
        HASH_MODEL_ID
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts.iter().map(|t| Self::vector(t)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

/// Client for `{model, input: [..]} -> {data: [{embedding: [..]}]}` endpoints.
pub struct HttpEmbeddingProvider {
    config: HttpEmbeddingConfig,
    token: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: ConcurrencyLimiter,
    sleeper: Box<dyn Sleeper>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Self {
        let token = config.token_env.as_deref().and_then(|v| std::env::var(v).ok());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        let limiter = ConcurrencyLimiter::new(config.max_in_flight);
        Self {
            config,
            token,
            agent,
            retry: RetryPolicy::default(),
            limiter,
            sleeper: Box::new(ThreadSleeper),
        }
    }

    pub fn limiter(&self) -> &ConcurrencyLimiter {
        &self.limiter
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ureq::Error> {
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(tok) = &self.token {
            req = req.header("Authorization", &format!("Bearer {tok}"));
        }
        let mut resp = req.send_json(EmbedRequest {
            model: &self.config.model,
            input: texts,
        })?;
        let body: EmbedResponse = resp.body_mut().read_json()?;
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let rows = self
            .retry
            .run(self.sleeper.as_ref(), classify_ureq, |_| self.request(texts))
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        if rows.len() != texts.len() {
            return Err(EmbeddingError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                rows.len()
            )));
        }
        rows.into_iter()
            .map(|values| {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(EmbeddingError::Malformed("non-finite embedding value".into()));
                }
                Ok(EmbeddingVector {
                    values,
                    model_id: self.config.model.clone(),
                })
            })
            .collect()
    }
}

/// Whether an embedding error is worth retrying at a higher level.
pub fn is_transient(err: &EmbeddingError) -> bool {
    matches!(err, EmbeddingError::Transport(_))
}

/// Disk cache in front of another provider. One JSON file per
/// sha256(model_id, text); writes go through a temp file and rename, so
/// concurrent writers of the same key are harmless.
pub struct CachedProvider<P> {
    inner: P,
    dir: PathBuf,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| EmbeddingError::Cache {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { inner, dir })
    }

    pub fn key(model_id: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(model_id.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn path_for(&self, text: &str) -> PathBuf {
        self.dir.join(format!("{}.json", Self::key(self.inner.model_id(), text)))
    }

    fn read(path: &Path) -> Option<EmbeddingVector> {
        let bytes = fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn write(&self, path: &Path, v: &EmbeddingVector) -> Result<(), EmbeddingError> {
        let err = |source| EmbeddingError::Cache {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(err)?;
        f.write_all(&serde_json::to_vec(v).expect("vectors serialize")).map_err(err)?;
        drop(f);
        fs::rename(&tmp, path).map_err(err)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out: Vec<Option<EmbeddingVector>> = texts.iter().map(|t| Self::read(&self.path_for(t))).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed_batch(&batch)?;
            for (&i, v) in missing.iter().zip(fresh) {
                self.write(&self.path_for(&texts[i]), &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Option<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Candidate indices, most similar first.
    pub order: Vec<usize>,
    /// Similarity per candidate, indexed like the input.
    pub similarities: Vec<f64>,
    /// Candidates whose similarity was undefined (zero norm) and set to -1.
    pub zero_norm: Vec<usize>,
}

/// Sorts candidates by descending cosine similarity to `target`, ties
/// broken by ascending index. Zero-norm vectors get similarity -1.
pub fn rank_by_cosine(target: &EmbeddingVector, candidates: &[EmbeddingVector]) -> Result<Ranking, EmbeddingError> {
    for (i, c) in candidates.iter().enumerate() {
        if c.model_id != target.model_id || c.values.len() != target.values.len() {
            return Err(EmbeddingError::Mismatch(format!(
                "candidate {i} is {} x{}, target is {} x{}",
                c.model_id,
                c.values.len(),
                target.model_id,
                target.values.len()
            )));
        }
    }
    let mut zero_norm = Vec::new();
    let similarities: Vec<f64> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            cosine(target, c).unwrap_or_else(|| {
                zero_norm.push(i);
                -1.0
            })
        })
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| similarities[b].total_cmp(&similarities[a]).then(a.cmp(&b)));
    Ok(Ranking {
        order,
        similarities,
        zero_norm,
    })
}
