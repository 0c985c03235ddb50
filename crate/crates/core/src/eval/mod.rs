//! Scoring: exact-set-match, execution accuracy, and run reports with
//! token and cost accounting.

pub mod exec;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Instance, Schema, SchemaSet};
use crate::sqlkit::{decompose_with_schema, has_top_level_order_by};

pub use exec::{cells_equal, execute_query, results_match, Cell, ExecError, Row, DEFAULT_TIMEOUT};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold query does not parse: {0}")]
    GoldUnparseable(String),
    #[error("gold query does not execute: {0}")]
    GoldExecution(ExecError),
    #[error("price table {path}: {reason}")]
    PriceTable { path: String, reason: String },
}

/// Clause-wise set comparison with values stripped. An unparseable
/// prediction never matches.
pub fn exact_set_match(pred: &str, gold: &str) -> Result<bool, EvalError> {
    exact_set_match_with_schema(pred, gold, None)
}

pub fn exact_set_match_with_schema(pred: &str, gold: &str, schema: Option<&Schema>) -> Result<bool, EvalError> {
    let g = decompose_with_schema(gold, schema).map_err(|e| EvalError::GoldUnparseable(e.to_string()))?;
    Ok(decompose_with_schema(pred, schema).is_ok_and(|p| p == g))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub matched: bool,
    pub timed_out: bool,
    pub pred_error: Option<String>,
}

/// Runs both queries against the schema's database and compares results.
pub fn execution_outcome(pred: &str, gold: &str, schema: &Schema, timeout: Duration) -> Result<ExecutionOutcome, EvalError> {
    let gold_rows = execute_query(&schema.db_file_path, gold, timeout).map_err(EvalError::GoldExecution)?;
    match execute_query(&schema.db_file_path, pred, timeout) {
        Ok(rows) => Ok(ExecutionOutcome {
            matched: results_match(&gold_rows, &rows, has_top_level_order_by(gold)),
            timed_out: false,
            pred_error: None,
        }),
        Err(e) => Ok(ExecutionOutcome {
            matched: false,
            timed_out: matches!(e, ExecError::Timeout(_)),
            pred_error: Some(e.to_string()),
        }),
    }
}

pub fn execution_match(pred: &str, gold: &str, schema: &Schema) -> Result<bool, EvalError> {
    execution_outcome(pred, gold, schema, DEFAULT_TIMEOUT).map(|o| o.matched)
}

/// One line of a predictions file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub sql: String,
    #[serde(default)]
    pub prompt_tokens: usize,
    #[serde(default)]
    pub completion_tokens: usize,
    #[serde(default)]
    pub examples_included: usize,
    #[serde(default)]
    pub question_jaccard_avg: Option<f64>,
    #[serde(default)]
    pub query_jaccard_avg: Option<f64>,
    /// Sum of backend-reported latencies for this instance.
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt_price_per_1k: f64,
    pub completion_price_per_1k: f64,
}

/// Per-model token prices, read from a TOML file of the form
/// `[models."gpt-4"] prompt_price_per_1k = 0.03 ...`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(default)]
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let err = |reason: String| EvalError::PriceTable {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn cost(&self, model_id: &str, prompt_tokens: usize, completion_tokens: usize) -> Option<f64> {
        self.models.get(model_id).map(|p| {
            prompt_tokens as f64 / 1000.0 * p.prompt_price_per_1k
                + completion_tokens as f64 / 1000.0 * p.completion_price_per_1k
        })
    }
}

pub const FLAG_MISSING: &str = "missing";
pub const FLAG_GOLD_UNPARSEABLE: &str = "gold_unparseable";
pub const FLAG_GOLD_EXEC_ERROR: &str = "gold_exec_error";
pub const FLAG_TIMEOUT: &str = "timeout";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_id: String,
    pub em: bool,
    pub ex: bool,
    /// False when the gold query could not be scored for this metric.
    pub em_scored: bool,
    pub ex_scored: bool,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub examples_included: usize,
    pub question_jaccard_avg: Option<f64>,
    pub query_jaccard_avg: Option<f64>,
    pub latency_ms: u64,
    pub error: Option<String>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub instances: usize,
    pub em_scored: usize,
    pub ex_scored: usize,
    pub em_accuracy: f64,
    pub ex_accuracy: f64,
    pub missing: usize,
    pub total_prompt_tokens: usize,
    pub total_completion_tokens: usize,
    pub avg_prompt_tokens: f64,
    pub avg_completion_tokens: f64,
    pub question_jaccard_avg: Option<f64>,
    pub query_jaccard_avg: Option<f64>,
    pub total_cost: Option<f64>,
    /// Sum of backend latencies (zero for offline backends).
    pub runtime_ms: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Aggregates {
    /// Recomputes aggregates from rows; the report stores exactly this.
    pub fn from_rows(rows: &[InstanceRow], cost: impl Fn(usize, usize) -> Option<f64>) -> Self {
        let present: Vec<&InstanceRow> = rows.iter().filter(|r| !r.flags.iter().any(|f| f == FLAG_MISSING)).collect();
        let em_scored = rows.iter().filter(|r| r.em_scored).count();
        let ex_scored = rows.iter().filter(|r| r.ex_scored).count();
        let total_prompt_tokens = rows.iter().map(|r| r.prompt_tokens).sum();
        let total_completion_tokens = rows.iter().map(|r| r.completion_tokens).sum();
        Self {
            instances: rows.len(),
            em_scored,
            ex_scored,
            em_accuracy: ratio(rows.iter().filter(|r| r.em_scored && r.em).count(), em_scored),
            ex_accuracy: ratio(rows.iter().filter(|r| r.ex_scored && r.ex).count(), ex_scored),
            missing: rows.len() - present.len(),
            total_prompt_tokens,
            total_completion_tokens,
            avg_prompt_tokens: ratio(total_prompt_tokens, present.len()),
            avg_completion_tokens: ratio(total_completion_tokens, present.len()),
            question_jaccard_avg: mean(rows.iter().filter_map(|r| r.question_jaccard_avg)),
            query_jaccard_avg: mean(rows.iter().filter_map(|r| r.query_jaccard_avg)),
            total_cost: cost(total_prompt_tokens, total_completion_tokens),
            runtime_ms: rows.iter().map(|r| r.latency_ms).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Label of the token counter that produced the token numbers.
    pub token_counter: String,
    pub model_id: String,
    pub per_instance: Vec<InstanceRow>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub timeout: Duration,
    pub model_id: String,
    pub token_counter: String,
    pub prices: PriceTable,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            model_id: String::new(),
            token_counter: "approx".into(),
            prices: PriceTable::default(),
        }
    }
}

fn score_one(inst: &Instance, pred: Option<&Prediction>, schemas: &SchemaSet, opts: &EvalOptions) -> InstanceRow {
    let mut row = InstanceRow {
        instance_id: inst.id.as_str().to_string(),
        em: false,
        ex: false,
        em_scored: true,
        ex_scored: true,
        prompt_tokens: 0,
        completion_tokens: 0,
        examples_included: 0,
        question_jaccard_avg: None,
        query_jaccard_avg: None,
        latency_ms: 0,
        error: None,
        flags: Vec::new(),
    };
    let schema = schemas.get(&inst.db_id);
    if decompose_with_schema(&inst.gold_sql, schema).is_err() {
        row.em_scored = false;
        row.flags.push(FLAG_GOLD_UNPARSEABLE.into());
    }
    let gold_runs = schema.map(|s| execute_query(&s.db_file_path, &inst.gold_sql, opts.timeout));
    if !matches!(gold_runs, Some(Ok(_))) {
        row.ex_scored = false;
        row.flags.push(FLAG_GOLD_EXEC_ERROR.into());
    }
    let Some(pred) = pred else {
        row.flags.push(FLAG_MISSING.into());
        return row;
    };
    row.prompt_tokens = pred.prompt_tokens;
    row.completion_tokens = pred.completion_tokens;
    row.examples_included = pred.examples_included;
    row.question_jaccard_avg = pred.question_jaccard_avg;
    row.query_jaccard_avg = pred.query_jaccard_avg;
    row.latency_ms = pred.latency_ms;
    row.error = pred.error.clone();
    row.flags.extend(pred.flags.iter().cloned());
    if pred.sql.trim().is_empty() {
        return row;
    }
    if row.em_scored {
        row.em = exact_set_match_with_schema(&pred.sql, &inst.gold_sql, schema).unwrap_or(false);
    }
    if let (Some(s), Some(Ok(gold_rows))) = (schema, &gold_runs) {
        match execute_query(&s.db_file_path, &pred.sql, opts.timeout) {
            Ok(rows) => row.ex = results_match(gold_rows, &rows, has_top_level_order_by(&inst.gold_sql)),
            Err(ExecError::Timeout(_)) => row.flags.push(FLAG_TIMEOUT.into()),
            Err(_) => {}
        }
    }
    row
}

/// Scores every instance (missing predictions count as wrong) and builds
/// the report in instance order.
pub fn evaluate_run(predictions: &[Prediction], instances: &[Instance], schemas: &SchemaSet, opts: &EvalOptions) -> EvalReport {
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let rows: Vec<InstanceRow> = instances
        .par_iter()
        .map(|inst| score_one(inst, by_id.get(inst.id.as_str()).copied(), schemas, opts))
        .collect();
    let aggregates = Aggregates::from_rows(&rows, |p, c| opts.prices.cost(&opts.model_id, p, c));
    EvalReport {
        token_counter: opts.token_counter.clone(),
        model_id: opts.model_id.clone(),
        per_instance: rows,
        aggregates,
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Human-readable summary of one report.
pub fn render_report_text(report: &EvalReport) -> String {
    let a = &report.aggregates;
    let mut s = String::new();
    let _ = writeln!(s, "model            {}", if report.model_id.is_empty() { "-" } else { &report.model_id });
    let _ = writeln!(s, "instances        {} ({} missing)", a.instances, a.missing);
    let _ = writeln!(s, "EM               {:.4} over {}", a.em_accuracy, a.em_scored);
    let _ = writeln!(s, "EX               {:.4} over {}", a.ex_accuracy, a.ex_scored);
    let _ = writeln!(s, "avg prompt tok   {:.1} ({})", a.avg_prompt_tokens, report.token_counter);
    let _ = writeln!(s, "avg output tok   {:.1}", a.avg_completion_tokens);
    let _ = writeln!(s, "question jaccard {}", opt(a.question_jaccard_avg, 4));
    let _ = writeln!(s, "query jaccard    {}", opt(a.query_jaccard_avg, 4));
    let _ = writeln!(s, "total cost       {}", opt(a.total_cost, 4));
    let _ = writeln!(s, "backend time     {} ms", a.runtime_ms);
    let flagged: Vec<&InstanceRow> = report.per_instance.iter().filter(|r| !r.flags.is_empty() || r.error.is_some()).collect();
    if !flagged.is_empty() {
        let _ = writeln!(s, "\nflagged instances:");
        for r in flagged {
            let _ = writeln!(s, "  {:<16} {} {}", r.instance_id, r.flags.join(","), r.error.as_deref().unwrap_or(""));
        }
    }
    s
}

/// Accuracy against average prompt tokens, one line per labelled run.
pub fn render_efficiency_table(runs: &[(String, EvalReport)]) -> String {
    let width = runs.iter().map(|(l, _)| l.len()).max().unwrap_or(3).max(3);
    let mut s = format!("{:<width$}  {:>7}  {:>7}  {:>10}  {:>9}  {:>10}\n", "run", "EX", "EM", "avg tokens", "avg out", "cost");
    for (label, r) in runs {
        let a = &r.aggregates;
        let _ = writeln!(
            s,
            "{:<width$}  {:>7.4}  {:>7.4}  {:>10.1}  {:>9.1}  {:>10}",
            label,
            a.ex_accuracy,
            a.em_accuracy,
            a.avg_prompt_tokens,
            a.avg_completion_tokens,
            opt(a.total_cost, 4)
        );
    }
    s
}
