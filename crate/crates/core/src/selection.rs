//! Few-shot example selection.
//!
//! Strategies: random sampling, question similarity (raw or masked),
//! query similarity over keyword vectors, the two-tier DAIL ordering, and
//! the Upper-Limit variant that uses the gold query as reference.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidatePool, Instance, SchemaSet};
use crate::embedding::{cosine, rank_by_cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::masking::{mask_with_schema, question_token_set};
use crate::sqlkit::ast::AGGREGATES;
use crate::sqlkit::{extract_skeleton, Skeleton, SKELETON_KEYWORDS};

pub const DEFAULT_TAU: f64 = 0.9;
pub const LEADERBOARD_TAU: f64 = 0.85;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("strategy {0} needs a reference query")]
    MissingReference(&'static str),
    #[error("strategy {strategy} needs {what} embeddings, which were not prepared")]
    MissingEmbeddings { strategy: &'static str, what: &'static str },
    #[error("no schema for database `{0}`")]
    UnknownSchema(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    #[serde(rename = "qts")]
    QuestionSimilarity,
    #[serde(rename = "mqs")]
    MaskedQuestionSimilarity,
    #[serde(rename = "qrs")]
    QuerySimilarity,
    Dail,
    UpperLimit,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::QuestionSimilarity => "qts",
            Self::MaskedQuestionSimilarity => "mqs",
            Self::QuerySimilarity => "qrs",
            Self::Dail => "dail",
            Self::UpperLimit => "upper_limit",
        }
    }

    /// Strategies that consume a preliminary prediction.
    pub fn needs_preliminary(self) -> bool {
        matches!(self, Self::QuerySimilarity | Self::Dail)
    }

    fn needs_raw_embeddings(self) -> bool {
        self == Self::QuestionSimilarity
    }

    fn needs_masked_embeddings(self) -> bool {
        matches!(self, Self::MaskedQuestionSimilarity | Self::Dail | Self::UpperLimit)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreliminarySource {
    /// Predictions file keyed by instance id.
    File,
    /// Zero-shot CR_P pass through the configured backend.
    #[default]
    ZeroShotPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub k: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub preliminary_source: PreliminarySource,
    /// Exclude candidates from the target's own database.
    #[serde(default = "default_true")]
    pub cross_domain: bool,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_true() -> bool {
    true
}

impl SelectionConfig {
    pub fn new(strategy: Strategy, k: usize) -> Self {
        Self {
            strategy,
            k,
            tau: DEFAULT_TAU,
            seed: 0,
            preliminary_source: PreliminarySource::default(),
            cross_domain: true,
        }
    }
}

/// Similarity statistics of one chosen example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStats {
    pub instance_id: String,
    /// Jaccard over masked-question word sets, target vs example.
    pub question_jaccard: f64,
    /// Skeleton Jaccard against the strategy's reference query.
    pub query_jaccard: f64,
    /// Skeleton Jaccard against the target's gold query.
    pub gold_query_jaccard: f64,
    /// Similarity that drove the ranking (-1 when undefined).
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: Vec<Instance>,
    pub per_example: Vec<ExampleStats>,
    pub strategy: Strategy,
    pub k: usize,
    /// The reference query did not parse; its skeleton is lexical only.
    pub degraded_reference: bool,
    /// Some similarities were undefined (zero-norm embeddings).
    pub zero_norm_flagged: bool,
}

/// |a ∩ b| / |a ∪ b|; two empty sets are identical (1.0).
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Keyword-presence vector used by query-similarity selection.
pub fn syntax_vector(skeleton: &Skeleton) -> Vec<bool> {
    SKELETON_KEYWORDS
        .iter()
        .chain(AGGREGATES.iter())
        .map(|k| skeleton.token_set.contains(*k))
        .collect()
}

fn binary_cosine(a: &[bool], b: &[bool]) -> f64 {
    let as_vec = |v: &[bool]| EmbeddingVector {
        values: v.iter().map(|&x| f64::from(u8::from(x))).collect(),
        model_id: "syntax".into(),
    };
    cosine(&as_vec(a), &as_vec(b)).unwrap_or(-1.0)
}

/// An instance with everything selection needs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedCandidate {
    pub instance: Instance,
    pub masked_question: String,
    pub masked_tokens: BTreeSet<String>,
    pub raw_embedding: Option<EmbeddingVector>,
    pub masked_embedding: Option<EmbeddingVector>,
    pub skeleton: Skeleton,
    pub syntax: Vec<bool>,
}

impl PreparedCandidate {
    pub fn from_parts(
        instance: Instance,
        masked_question: String,
        raw_embedding: Option<EmbeddingVector>,
        masked_embedding: Option<EmbeddingVector>,
    ) -> Self {
        let skeleton = extract_skeleton(&instance.gold_sql);
        Self {
            masked_tokens: question_token_set(&masked_question),
            syntax: syntax_vector(&skeleton),
            skeleton,
            instance,
            masked_question,
            raw_embedding,
            masked_embedding,
        }
    }
}

/// Texts per embedding request.
const EMBED_CHUNK: usize = 128;

fn embed_chunked(provider: &dyn EmbeddingProvider, texts: &[String]) -> Result<Vec<EmbeddingVector>, SelectionError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_CHUNK) {
        out.extend(provider.embed_batch(chunk)?);
    }
    Ok(out)
}

/// Masks and embeds a batch of instances for `strategy`.
pub fn prepare_instances(
    instances: &[Instance],
    schemas: &SchemaSet,
    provider: &dyn EmbeddingProvider,
    strategy: Strategy,
) -> Result<Vec<PreparedCandidate>, SelectionError> {
    let mut masked = Vec::with_capacity(instances.len());
    for inst in instances {
        let schema = schemas
            .get(&inst.db_id)
            .ok_or_else(|| SelectionError::UnknownSchema(inst.db_id.clone()))?;
        masked.push(mask_with_schema(&inst.question, schema).masked);
    }
    let mut raw: Vec<Option<EmbeddingVector>> = vec![None; instances.len()];
    let mut msk: Vec<Option<EmbeddingVector>> = vec![None; instances.len()];
    if strategy.needs_raw_embeddings() {
        let texts: Vec<String> = instances.iter().map(|i| i.question.clone()).collect();
        raw = embed_chunked(provider, &texts)?.into_iter().map(Some).collect();
    }
    if strategy.needs_masked_embeddings() {
        msk = embed_chunked(provider, &masked)?.into_iter().map(Some).collect();
    }
    Ok(instances
        .iter()
        .zip(masked)
        .zip(raw.into_iter().zip(msk))
        .map(|((inst, m), (r, e))| PreparedCandidate::from_parts(inst.clone(), m, r, e))
        .collect())
}

#[derive(Debug, Clone)]
pub struct PreparedPool {
    pub candidates: Vec<PreparedCandidate>,
    pub source_split: String,
}

impl PreparedPool {
    pub fn prepare(
        pool: &CandidatePool,
        schemas: &SchemaSet,
        provider: &dyn EmbeddingProvider,
        strategy: Strategy,
    ) -> Result<Self, SelectionError> {
        Ok(Self {
            candidates: prepare_instances(&pool.instances, schemas, provider, strategy)?,
            source_split: pool.source_split.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Algorithm core of DAIL selection over precomputed scores: sort by
/// `question_sims` (descending, ties by index), move every candidate with
/// `query_sims >= tau` ahead of the rest keeping relative order, take `k`.
pub fn dail_order(question_sims: &[f64], query_sims: &[f64], tau: f64, k: usize) -> Vec<usize> {
    let mut by_question: Vec<usize> = (0..question_sims.len()).collect();
    by_question.sort_by(|&a, &b| question_sims[b].total_cmp(&question_sims[a]).then(a.cmp(&b)));
    let (high, low): (Vec<usize>, Vec<usize>) = by_question.into_iter().partition(|&i| query_sims[i] >= tau);
    high.into_iter().chain(low).take(k).collect()
}

/// Greedy query-similarity order: descending cosine to the reference
/// vector, skipping vectors equal to an already chosen one; skipped
/// candidates fill any remaining slots in the same order.
pub fn qrs_order(vectors: &[Vec<bool>], reference: &[bool], k: usize) -> (Vec<usize>, Vec<f64>) {
    let sims: Vec<f64> = vectors.iter().map(|v| binary_cosine(v, reference)).collect();
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    let mut skipped = Vec::new();
    for i in order {
        if chosen.len() == k {
            break;
        }
        if chosen.iter().any(|&c| vectors[c] == vectors[i]) {
            skipped.push(i);
        } else {
            chosen.push(i);
        }
    }
    let missing = k.saturating_sub(chosen.len());
    chosen.extend(skipped.into_iter().take(missing));
    (chosen, sims)
}

/// Uniform sample of `k` distinct indices out of `n`, deterministic per seed.
pub fn random_order(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, n, k.min(n)).into_vec()
}

fn embeddings<'a>(
    cands: &[&'a PreparedCandidate],
    target: &'a PreparedCandidate,
    masked: bool,
    strategy: Strategy,
) -> Result<(&'a EmbeddingVector, Vec<EmbeddingVector>), SelectionError> {
    let pick = |c: &'a PreparedCandidate| if masked { c.masked_embedding.as_ref() } else { c.raw_embedding.as_ref() };
    let missing = || SelectionError::MissingEmbeddings {
        strategy: strategy.label(),
        what: if masked { "masked-question" } else { "question" },
    };
    let t = pick(target).ok_or_else(missing)?;
    let c = cands
        .iter()
        .map(|c| pick(c).cloned().ok_or_else(missing))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((t, c))
}

/// Selects up to `config.k` examples for `target` from `pool`.
///
/// `reference_sql` is the preliminary prediction for QRS/DAIL; Upper-Limit
/// uses the target's gold query and ignores it.
pub fn select(
    config: &SelectionConfig,
    pool: &PreparedPool,
    target: &PreparedCandidate,
    reference_sql: Option<&str>,
) -> Result<SelectionResult, SelectionError> {
    let strategy = config.strategy;
    let eligible: Vec<&PreparedCandidate> = pool
        .candidates
        .iter()
        .filter(|c| !config.cross_domain || c.instance.db_id != target.instance.db_id)
        .filter(|c| c.instance.id != target.instance.id)
        .collect();
    let k = config.k.min(eligible.len());

    let reference = match strategy {
        Strategy::UpperLimit => Some(target.instance.gold_sql.as_str()),
        Strategy::QuerySimilarity | Strategy::Dail => {
            Some(reference_sql.ok_or(SelectionError::MissingReference(strategy.label()))?)
        }
        _ => None,
    };
    let reference_skeleton = reference.map(extract_skeleton);
    let mut zero_norm_flagged = false;

    let (order, sims): (Vec<usize>, Vec<f64>) = match strategy {
        Strategy::Random => {
            let order = random_order(eligible.len(), k, config.seed);
            (order, vec![f64::NAN; eligible.len()])
        }
        Strategy::QuestionSimilarity | Strategy::MaskedQuestionSimilarity => {
            let masked = strategy == Strategy::MaskedQuestionSimilarity;
            let (t, c) = embeddings(&eligible, target, masked, strategy)?;
            let r = rank_by_cosine(t, &c)?;
            zero_norm_flagged = !r.zero_norm.is_empty();
            (r.order.into_iter().take(k).collect(), r.similarities)
        }
        Strategy::QuerySimilarity => {
            let vectors: Vec<Vec<bool>> = eligible.iter().map(|c| c.syntax.clone()).collect();
            let reference_vec = syntax_vector(reference_skeleton.as_ref().expect("reference set above"));
            qrs_order(&vectors, &reference_vec, k)
        }
        Strategy::Dail | Strategy::UpperLimit => {
            let (t, c) = embeddings(&eligible, target, true, strategy)?;
            let r = rank_by_cosine(t, &c)?;
            zero_norm_flagged = !r.zero_norm.is_empty();
            let skel = reference_skeleton.as_ref().expect("reference set above");
            let query_sims: Vec<f64> = eligible.iter().map(|c| jaccard(&c.skeleton.token_set, &skel.token_set)).collect();
            (dail_order(&r.similarities, &query_sims, config.tau, k), r.similarities)
        }
    };

    // Reports compare against the target's gold when there is no reference.
    let gold_skeleton = extract_skeleton(&target.instance.gold_sql);
    let stats_reference = reference_skeleton.as_ref().unwrap_or(&gold_skeleton);
    let per_example = order
        .iter()
        .map(|&i| {
            let c = eligible[i];
            ExampleStats {
                instance_id: c.instance.id.as_str().to_string(),
                question_jaccard: jaccard(&target.masked_tokens, &c.masked_tokens),
                query_jaccard: jaccard(&c.skeleton.token_set, &stats_reference.token_set),
                gold_query_jaccard: jaccard(&c.skeleton.token_set, &gold_skeleton.token_set),
                cosine: sims[i],
            }
        })
        .collect();

    Ok(SelectionResult {
        chosen: order.iter().map(|&i| eligible[i].instance.clone()).collect(),
        per_example,
        strategy,
        k: config.k,
        degraded_reference: reference_skeleton.is_some_and(|s| s.degraded),
        zero_norm_flagged,
    })
}
