//! End-to-end inference: selection, prompt assembly, completion, scoring.

mod config;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_instances, load_schemas, CandidatePool, Instance, SchemaSet, SkippedRecord};
use crate::embedding::{fnv1a, CachedProvider, EmbeddingProvider, HashProvider, HttpEmbeddingConfig, HttpEmbeddingProvider};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvalOptions, EvalReport, Prediction, PriceTable};
use crate::llm::{
    self_consistency, Backend, CompletionRequest, HttpBackend, HttpBackendConfig, OracleBackend, RecordingBackend,
    ReplayBackend,
};
use crate::promptgen::{
    assemble_prompt, render_question, ApproxCounter, BpeCounter, OrganizationConfig, RenderedPrompt,
    RepresentationConfig, RepresentationKind, TokenCounter,
};
use crate::selection::{prepare_instances, select, PreliminarySource, PreparedPool, SelectionResult};
use crate::sqlkit::extract_first_sql;

pub use config::{
    apply_override, BackendKind, BackendSection, ConfigError, CounterKind, DatasetConfig, EmbeddingKind,
    EmbeddingSection, OrganizationSection, OutputSection, RepresentationSection, RunConfig, SelectionSection,
    TokensSection,
};

pub const FLAG_NO_SQL: &str = "no_sql_extracted";
pub const FLAG_SC_ALL_FAILED: &str = "self_consistency_all_failed";
pub const FLAG_ZERO_NORM: &str = "zero_norm_embedding";
pub const FLAG_DEGRADED_REFERENCE: &str = "degraded_reference";

/// Everything an inference call needs besides the target instance.
pub struct RunContext {
    pub schemas: SchemaSet,
    pub pool: PreparedPool,
    pub backend: Arc<dyn Backend>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub counter: Arc<dyn TokenCounter>,
    /// Preliminary predictions by instance id, for `preliminary_source = "file"`.
    pub preliminary: HashMap<String, String>,
}

/// Schemas and instances named by a config's `[dataset]` section.
pub struct Dataset {
    pub schemas: SchemaSet,
    pub instances: Vec<Instance>,
    pub pool: CandidatePool,
    pub skipped: Vec<SkippedRecord>,
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let schemas = SchemaSet::new(load_schemas(&cfg.tables, &cfg.db_root)?);
    let run = load_instances(&cfg.instances, &schemas)?;
    let pool = load_instances(&cfg.pool, &schemas)?;
    let mut skipped = run.skipped;
    skipped.extend(pool.skipped);
    let source = crate::corpus::split_label(&cfg.pool);
    Ok(Dataset {
        schemas,
        instances: run.instances,
        pool: CandidatePool::new(pool.instances, source),
        skipped,
    })
}

pub fn build_counter(cfg: &TokensSection) -> Result<Arc<dyn TokenCounter>> {
    Ok(match cfg.counter {
        CounterKind::Approx => Arc::new(ApproxCounter),
        CounterKind::Bpe => {
            let path = cfg.merges_file.as_ref().ok_or_else(|| ConfigError::Invalid {
                key: "tokens.merges_file".into(),
                reason: "required for the bpe counter".into(),
            })?;
            Arc::new(BpeCounter::from_merges_file(path)?)
        }
    })
}

pub fn build_embedder(cfg: &EmbeddingSection) -> Result<Arc<dyn EmbeddingProvider>> {
    let missing = |key: &str| ConfigError::Invalid {
        key: format!("embedding.{key}"),
        reason: "required for http embeddings".into(),
    };
    Ok(match (cfg.provider, &cfg.cache_dir) {
        (EmbeddingKind::Hash, None) => Arc::new(HashProvider),
        (EmbeddingKind::Hash, Some(dir)) => Arc::new(CachedProvider::new(HashProvider, dir)?),
        (EmbeddingKind::Http, cache) => {
            let http = HttpEmbeddingProvider::new(HttpEmbeddingConfig {
                endpoint: cfg.endpoint.clone().ok_or_else(|| missing("endpoint"))?,
                model: cfg.model.clone().ok_or_else(|| missing("model"))?,
                token_env: cfg.token_env.clone(),
                max_in_flight: 4,
                timeout_secs: 60,
            });
            match cache {
                Some(dir) => Arc::new(CachedProvider::new(http, dir)?),
                None => Arc::new(http),
            }
        }
    })
}

/// Builds the configured backend. The oracle answers with gold queries of
/// `gold_source`; recording wraps whichever backend was built.
pub fn build_backend(cfg: &BackendSection, gold_source: &[Instance], counter: Arc<dyn TokenCounter>) -> Result<Arc<dyn Backend>> {
    let fixtures = || {
        cfg.fixtures.clone().ok_or_else(|| ConfigError::Invalid {
            key: "backend.fixtures".into(),
            reason: "fixture directory not set".into(),
        })
    };
    let base: Arc<dyn Backend> = match cfg.kind {
        BackendKind::Oracle => Arc::new(OracleBackend::new(
            gold_source.iter().map(|i| (i.id.as_str().to_string(), i.gold_sql.clone())),
            counter,
        )),
        BackendKind::Replay => Arc::new(ReplayBackend::load(&fixtures()?)?),
        BackendKind::Http => Arc::new(HttpBackend::new(HttpBackendConfig {
            endpoint: cfg.endpoint.clone().ok_or_else(|| ConfigError::Invalid {
                key: "backend.endpoint".into(),
                reason: "required for the http backend".into(),
            })?,
            api_style: cfg.api_style,
            api_key_env: cfg.api_key_env.clone(),
            requests_per_minute: cfg.requests_per_minute,
            max_in_flight: cfg.max_in_flight,
            timeout_secs: 120,
        })?),
    };
    if cfg.record {
        Ok(Arc::new(RecordingBackend::new(base, &fixtures()?)?))
    } else {
        Ok(base)
    }
}

/// One `{instance_id, sql}` object per line.
pub fn load_preliminary(path: &Path) -> Result<HashMap<String, String>> {
    #[derive(Deserialize)]
    struct Line {
        instance_id: String,
        sql: String,
    }
    read_jsonl::<Line>(path).map(|lines| lines.into_iter().map(|l| (l.instance_id, l.sql)).collect())
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| Error::json(path, e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

impl RunContext {
    /// Loads data, prepares the pool and builds backend, embedder and counter.
    pub fn from_config(config: &RunConfig) -> Result<(Self, Vec<Instance>, Vec<SkippedRecord>)> {
        let data = load_dataset(&config.dataset)?;
        let counter = build_counter(&config.tokens)?;
        let embedder = build_embedder(&config.embedding)?;
        let gold: Vec<Instance> = data.instances.iter().chain(&data.pool.instances).cloned().collect();
        let backend = build_backend(&config.backend, &gold, counter.clone())?;
        let preliminary = match (&config.selection.preliminary_source, &config.selection.preliminary_file) {
            (PreliminarySource::File, Some(path)) => load_preliminary(path)?,
            _ => HashMap::new(),
        };
        let pool = PreparedPool::prepare(&data.pool, &data.schemas, embedder.as_ref(), config.selection.strategy)?;
        Ok((
            Self {
                schemas: data.schemas,
                pool,
                backend,
                embedder,
                counter,
                preliminary,
            },
            data.instances,
            data.skipped,
        ))
    }
}

/// What went into one prediction; one line of `prompts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLogEntry {
    pub instance_id: String,
    pub prompt: Option<String>,
    pub token_count: usize,
    pub examples_included: usize,
    pub preliminary_sql: Option<String>,
    pub selection: Option<SelectionResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub prediction: Prediction,
    pub prompt: Option<RenderedPrompt>,
    pub selection: Option<SelectionResult>,
    pub preliminary_sql: Option<String>,
}

impl InferenceOutput {
    pub fn log_entry(&self) -> PromptLogEntry {
        PromptLogEntry {
            instance_id: self.prediction.instance_id.clone(),
            prompt: self.prompt.as_ref().map(|p| p.text.clone()),
            token_count: self.prompt.as_ref().map_or(0, |p| p.token_count),
            examples_included: self.prediction.examples_included,
            preliminary_sql: self.preliminary_sql.clone(),
            selection: self.selection.clone(),
        }
    }
}

#[derive(Default)]
struct Usage {
    prompt_tokens: usize,
    completion_tokens: usize,
    latency: Duration,
}

impl Usage {
    fn add(&mut self, p: usize, c: usize, l: Duration) {
        self.prompt_tokens += p;
        self.completion_tokens += c;
        self.latency += l;
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn request(config: &RunConfig, target: &Instance, prompt: &str) -> CompletionRequest {
    let mut req = CompletionRequest::new(prompt, config.backend.model_id.clone());
    req.temperature = config.backend.temperature;
    req.max_tokens = config.backend.max_tokens;
    req.instance_id = Some(target.id.as_str().to_string());
    req
}

/// Zero-shot CR_P prediction used as the reference query for QRS/DAIL.
fn zero_shot_preliminary(target: &Instance, ctx: &RunContext, config: &RunConfig, usage: &mut Usage) -> Result<String> {
    let schema = ctx.schemas.require(&target.db_id)?;
    let rep = RepresentationConfig::new(RepresentationKind::CodeRepresentation);
    let org = OrganizationConfig::new(config.organization.kind, 0);
    let prompt = assemble_prompt(
        &target.question,
        schema,
        &rep,
        &org,
        &[],
        &ctx.schemas,
        config.context_limit,
        ctx.counter.as_ref(),
    )?;
    let resp = ctx.backend.complete(&request(config, target, &prompt.text))?;
    usage.add(resp.prompt_tokens, resp.completion_tokens, resp.latency);
    Ok(extract_first_sql(&resp.text, prompt.ends_with_select).unwrap_or_default())
}

struct Partial {
    prompt: Option<RenderedPrompt>,
    selection: Option<SelectionResult>,
    preliminary_sql: Option<String>,
}

fn infer_inner(target: &Instance, ctx: &RunContext, config: &RunConfig, pred: &mut Prediction, usage: &mut Usage) -> Result<Partial> {
    let schema = ctx.schemas.require(&target.db_id)?;
    let mut partial = Partial {
        prompt: None,
        selection: None,
        preliminary_sql: None,
    };
    let mut sel_cfg = config.selection_config();
    sel_cfg.seed ^= fnv1a(target.id.as_str().as_bytes());

    if sel_cfg.k > 0 {
        let prepared = prepare_instances(std::slice::from_ref(target), &ctx.schemas, ctx.embedder.as_ref(), sel_cfg.strategy)?
            .pop()
            .expect("one prepared target");
        if sel_cfg.strategy.needs_preliminary() {
            let sql = match sel_cfg.preliminary_source {
                PreliminarySource::File => ctx
                    .preliminary
                    .get(target.id.as_str())
                    .cloned()
                    .ok_or_else(|| ConfigError::Invalid {
                        key: "selection.preliminary_file".into(),
                        reason: format!("no preliminary prediction for {}", target.id.as_str()),
                    })?,
                PreliminarySource::ZeroShotPass => zero_shot_preliminary(target, ctx, config, usage)?,
            };
            partial.preliminary_sql = Some(sql);
        }
        let result = select(&sel_cfg, &ctx.pool, &prepared, partial.preliminary_sql.as_deref())?;
        if sel_cfg.cross_domain {
            assert!(
                result.chosen.iter().all(|c| c.db_id != target.db_id),
                "cross-domain selection returned an example from {}",
                target.db_id
            );
        }
        if result.zero_norm_flagged {
            pred.flags.push(FLAG_ZERO_NORM.into());
        }
        if result.degraded_reference {
            pred.flags.push(FLAG_DEGRADED_REFERENCE.into());
        }
        partial.selection = Some(result);
    }

    let chosen: &[Instance] = partial.selection.as_ref().map_or(&[], |s| &s.chosen);
    let prompt = assemble_prompt(
        &target.question,
        schema,
        &config.representation_config(),
        &config.organization_config(),
        chosen,
        &ctx.schemas,
        config.context_limit,
        ctx.counter.as_ref(),
    )?;
    pred.examples_included = prompt.examples_included;
    if let Some(sel) = &partial.selection {
        let included = &sel.per_example[..prompt.examples_included.min(sel.per_example.len())];
        pred.question_jaccard_avg = mean(included.iter().map(|e| e.question_jaccard));
        pred.query_jaccard_avg = mean(included.iter().map(|e| e.gold_query_jaccard));
    }

    let req = request(config, target, &prompt.text);
    let sql = if config.self_consistency_n > 0 {
        let timeout = Duration::from_secs(config.exec_timeout_secs);
        let sc = self_consistency(&req, prompt.ends_with_select, config.self_consistency_n, ctx.backend.as_ref(), schema, timeout)?;
        usage.add(sc.prompt_tokens, sc.completion_tokens, sc.latency);
        if sc.all_failed {
            pred.flags.push(FLAG_SC_ALL_FAILED.into());
        }
        Some(sc.sql).filter(|s| !s.is_empty())
    } else {
        let resp = ctx.backend.complete(&req)?;
        usage.add(resp.prompt_tokens, resp.completion_tokens, resp.latency);
        extract_first_sql(&resp.text, prompt.ends_with_select).ok()
    };
    match sql {
        Some(sql) => pred.sql = sql,
        None => pred.flags.push(FLAG_NO_SQL.into()),
    }
    partial.prompt = Some(prompt);
    Ok(partial)
}

/// Predicts SQL for one instance. Failures are recorded on the prediction
/// (empty SQL plus an error message) rather than returned.
pub fn dail_sql_infer(target: &Instance, ctx: &RunContext, config: &RunConfig) -> InferenceOutput {
    let mut pred = Prediction {
        instance_id: target.id.as_str().to_string(),
        ..Prediction::default()
    };
    let mut usage = Usage::default();
    let partial = infer_inner(target, ctx, config, &mut pred, &mut usage);
    pred.prompt_tokens = usage.prompt_tokens;
    pred.completion_tokens = usage.completion_tokens;
    pred.latency_ms = usage.latency.as_millis() as u64;
    match partial {
        Ok(p) => InferenceOutput {
            prediction: pred,
            prompt: p.prompt,
            selection: p.selection,
            preliminary_sql: p.preliminary_sql,
        },
        Err(e) => {
            log::warn!("{}: {e}", target.id.as_str());
            pred.sql.clear();
            pred.error = Some(e.to_string());
            InferenceOutput {
                prediction: pred,
                prompt: None,
                selection: None,
                preliminary_sql: None,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub predictions: Vec<Prediction>,
    pub prompts: Vec<PromptLogEntry>,
    pub report: EvalReport,
    pub wall_clock: Duration,
    pub backend: String,
}

pub fn eval_options(config: &RunConfig, counter: &dyn TokenCounter) -> Result<EvalOptions> {
    let prices = match &config.output.price_table {
        Some(p) => PriceTable::load(p)?,
        None => PriceTable::default(),
    };
    Ok(EvalOptions {
        timeout: Duration::from_secs(config.exec_timeout_secs),
        model_id: config.backend.model_id.clone(),
        token_counter: counter.name().to_string(),
        prices,
    })
}

/// Runs inference over `instances` on `config.jobs` threads and scores the
/// result. Output order follows `instances`.
pub fn run_dataset(instances: &[Instance], ctx: &RunContext, config: &RunConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| ConfigError::Invalid {
            key: "jobs".into(),
            reason: e.to_string(),
        })?;
    let outputs: Vec<InferenceOutput> = pool.install(|| instances.par_iter().map(|i| dail_sql_infer(i, ctx, config)).collect());
    let predictions: Vec<Prediction> = outputs.iter().map(|o| o.prediction.clone()).collect();
    let prompts = outputs.iter().map(InferenceOutput::log_entry).collect();
    let opts = eval_options(config, ctx.counter.as_ref())?;
    let report = pool.install(|| evaluate_run(&predictions, instances, &ctx.schemas, &opts));
    Ok(RunOutput {
        predictions,
        prompts,
        report,
        wall_clock: started.elapsed(),
        backend: ctx.backend.label().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub backend: String,
    pub wall_clock_ms: u64,
    pub instances: usize,
    pub skipped_records: usize,
}

/// Writes `config.toml`, `prompts.jsonl`, `predictions.jsonl`,
/// `report.json`, `report.txt` and `run_meta.json` into `dir`.
pub fn write_run_dir(dir: &Path, config: &RunConfig, out: &RunOutput, skipped: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("config.toml", config.to_toml())?;
    write_jsonl(&dir.join("prompts.jsonl"), &out.prompts)?;
    write_jsonl(&dir.join("predictions.jsonl"), &out.predictions)?;
    write_report(dir, &out.report)?;
    let meta = RunMeta {
        backend: out.backend.clone(),
        wall_clock_ms: out.wall_clock.as_millis() as u64,
        instances: out.predictions.len(),
        skipped_records: skipped,
    };
    write("run_meta.json", serde_json::to_string_pretty(&meta).expect("meta serializes"))
}

/// Writes `report.json` and `report.txt`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::json(&json, e))?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    let txt = dir.join("report.txt");
    fs::write(&txt, crate::eval::render_report_text(report)).map_err(|e| Error::io(&txt, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftPair {
    pub instance_id: String,
    pub prompt: String,
    pub response: String,
}

/// Zero-shot prompt paired with the gold query as the response.
pub fn sft_pair(inst: &Instance, schemas: &SchemaSet, rep: &RepresentationConfig) -> Result<SftPair> {
    let schema = schemas.require(&inst.db_id)?;
    Ok(SftPair {
        instance_id: inst.id.as_str().to_string(),
        prompt: render_question(&rep.clone().normalized(), &inst.question, schema),
        response: inst.gold_sql.clone(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SftExport {
    pub written: usize,
    pub skipped: usize,
}

/// Writes one JSON line per instance to `out`. Instances that cannot be
/// rendered are skipped and counted.
pub fn export_sft_pairs(instances: &[Instance], schemas: &SchemaSet, rep: &RepresentationConfig, out: &Path) -> Result<SftExport> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::io::BufWriter::new(fs::File::create(out).map_err(|e| Error::io(out, e))?);
    let mut export = SftExport::default();
    for inst in instances {
        match sft_pair(inst, schemas, rep) {
            Ok(pair) => {
                let line = serde_json::to_string(&pair).map_err(|e| Error::json(out, e))?;
                writeln!(file, "{line}").map_err(|e| Error::io(out, e))?;
                export.written += 1;
            }
            Err(e) => {
                log::warn!("{}: {e}", inst.id.as_str());
                export.skipped += 1;
            }
        }
    }
    file.flush().map_err(|e| Error::io(out, e))?;
    Ok(export)
}
