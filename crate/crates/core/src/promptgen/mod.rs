//! Prompt rendering: question representations, example organizations and
//! budget-constrained assembly.

mod tokens;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Instance, Schema, SchemaSet};

pub use tokens::{pretokenize, ApproxCounter, BpeCounter, TokenCounter};

/// Tokens kept free for the model's answer.
pub const RESPONSE_RESERVE: usize = 200;

pub const RULE_NO_EXPLANATION: &str = "Complete sqlite SQL query only and with no explanation";
pub const RULE_STEP_BY_STEP: &str = "Let's think step by step";

pub const SO_HEADER: &str = "/* Some SQL examples are provided based on similar problems: */";
pub const DAIL_HEADER: &str =
    "/* Some example questions and corresponding SQL queries are provided based on similar problems: */";

const ALPACA_PREAMBLE: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request.";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no schema for database `{0}`")]
    UnknownSchema(String),
    #[error("target prompt needs {tokens} tokens but the budget is {budget}")]
    TargetTooLong { tokens: usize, budget: usize },
    #[error("tokenizer error: {0}")]
    Tokenizer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RepresentationKind {
    #[serde(rename = "BS_P")]
    BasicPrompt,
    #[serde(rename = "TR_P")]
    TextRepresentation,
    #[serde(rename = "OD_P")]
    OpenAiDemonstration,
    #[serde(rename = "CR_P")]
    CodeRepresentation,
    #[serde(rename = "AS_P")]
    AlpacaSft,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 5] = [
        Self::BasicPrompt,
        Self::TextRepresentation,
        Self::OpenAiDemonstration,
        Self::CodeRepresentation,
        Self::AlpacaSft,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::BasicPrompt => "BS_P",
            Self::TextRepresentation => "TR_P",
            Self::OpenAiDemonstration => "OD_P",
            Self::CodeRepresentation => "CR_P",
            Self::AlpacaSft => "AS_P",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    None,
    NoExplanation,
    StepByStep,
}

impl RuleKind {
    pub fn sentence(self) -> Option<&'static str> {
        match self {
            Self::None => None,
            Self::NoExplanation => Some(RULE_NO_EXPLANATION),
            Self::StepByStep => Some(RULE_STEP_BY_STEP),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RepresentationConfig {
    pub kind: RepresentationKind,
    pub include_foreign_keys: bool,
    pub rule: RuleKind,
}

impl RepresentationConfig {
    /// Canonical configuration of a representation: CR_P carries foreign
    /// keys, OD_P carries the no-explanation rule.
    pub fn new(kind: RepresentationKind) -> Self {
        Self {
            kind,
            include_foreign_keys: kind == RepresentationKind::CodeRepresentation,
            rule: if kind == RepresentationKind::OpenAiDemonstration {
                RuleKind::NoExplanation
            } else {
                RuleKind::None
            },
        }
    }

    pub fn with_foreign_keys(mut self, on: bool) -> Self {
        self.include_foreign_keys = on;
        self.normalized()
    }

    pub fn with_rule(mut self, rule: RuleKind) -> Self {
        self.rule = rule;
        self
    }

    /// Enforces that CR_P always carries foreign keys.
    pub fn normalized(mut self) -> Self {
        if self.kind == RepresentationKind::CodeRepresentation {
            self.include_foreign_keys = true;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrganizationKind {
    #[serde(rename = "FI_O")]
    FullInformation,
    #[serde(rename = "SO_O")]
    SqlOnly,
    #[serde(rename = "DAIL_O")]
    Dail,
}

impl OrganizationKind {
    pub const ALL: [OrganizationKind; 3] = [Self::FullInformation, Self::SqlOnly, Self::Dail];

    pub fn label(self) -> &'static str {
        match self {
            Self::FullInformation => "FI_O",
            Self::SqlOnly => "SO_O",
            Self::Dail => "DAIL_O",
        }
    }
}

/// Display order of the chosen examples inside the prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrder {
    /// Least similar first, so the most similar example sits right above
    /// the target question.
    #[default]
    Ascending,
    /// Most similar first.
    Descending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrganizationConfig {
    pub kind: OrganizationKind,
    pub k: usize,
    #[serde(default)]
    pub order: ExampleOrder,
}

impl OrganizationConfig {
    pub fn new(kind: OrganizationKind, k: usize) -> Self {
        Self {
            kind,
            k,
            order: ExampleOrder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub token_count: usize,
    pub examples_included: usize,
    pub representation: RepresentationConfig,
    pub organization: OrganizationConfig,
    pub ends_with_select: bool,
}

fn column_list(table: &crate::corpus::Table) -> String {
    table.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
}

fn fk_line(schema: &Schema) -> Option<String> {
    if schema.foreign_keys.is_empty() {
        return None;
    }
    let pairs: Vec<String> = schema
        .foreign_keys
        .iter()
        .map(|fk| format!("{} = {}", fk.from, fk.to))
        .collect();
    Some(format!("Foreign_keys = [{}]", pairs.join(", ")))
}

fn sql_type(raw: &str) -> String {
    match raw.to_ascii_lowercase().as_str() {
        "number" => "int".to_string(),
        other => other.to_string(),
    }
}

fn create_table(schema: &Schema, table: &crate::corpus::Table) -> String {
    let pk: Vec<&str> = table
        .columns
        .iter()
        .filter(|c| c.is_primary_key)
        .map(|c| c.name.as_str())
        .collect();
    let mut body: Vec<String> = table
        .columns
        .iter()
        .map(|c| {
            let inline_pk = if c.is_primary_key && pk.len() == 1 { " primary key" } else { "" };
            format!("{} {}{}", c.name, sql_type(&c.sql_type), inline_pk)
        })
        .collect();
    if pk.len() > 1 {
        body.push(format!("primary key({})", pk.join(", ")));
    }
    for fk in schema.foreign_keys_from(&table.name) {
        body.push(format!(
            "foreign key({}) references {}({})",
            fk.from.column, fk.to.table, fk.to.column
        ));
    }
    let lines: Vec<String> = body.into_iter().map(|l| format!("\t{l}")).collect();
    format!("CREATE TABLE {}(\n{}\n);", table.name, lines.join(",\n"))
}

/// The schema portion of a representation, including any foreign-key
/// block. FI_O example rendering can substitute this part.
fn schema_block(rep: &RepresentationConfig, schema: &Schema) -> String {
    let fk = if rep.include_foreign_keys { fk_line(schema) } else { None };
    let mut out = String::new();
    match rep.kind {
        RepresentationKind::BasicPrompt => {
            for t in &schema.tables {
                out.push_str(&format!("Table {}, columns = [{}]\n", t.name, column_list(t)));
            }
            if let Some(fk) = fk {
                out.push_str(&fk);
                out.push('\n');
            }
        }
        RepresentationKind::TextRepresentation => {
            for t in &schema.tables {
                out.push_str(&format!("{}: {}\n", t.name, column_list(t)));
            }
            if let Some(fk) = fk {
                out.push_str(&fk);
                out.push('\n');
            }
        }
        RepresentationKind::OpenAiDemonstration => {
            out.push_str("# \n");
            for t in &schema.tables {
                out.push_str(&format!("# {}({})\n", t.name, column_list(t)));
            }
            if let Some(fk) = fk {
                out.push_str(&format!("# {fk}\n"));
            }
            out.push_str("# \n");
        }
        RepresentationKind::CodeRepresentation => {
            for t in &schema.tables {
                out.push_str(&create_table(schema, t));
                out.push_str("\n\n");
            }
        }
        RepresentationKind::AlpacaSft => {
            for t in &schema.tables {
                out.push_str(&format!("{}({})\n", t.name, column_list(t)));
            }
            if let Some(fk) = fk {
                out.push_str(&fk);
                out.push('\n');
            }
        }
    }
    out
}

/// Renders the target question under a representation.
pub fn render_question(rep: &RepresentationConfig, question: &str, schema: &Schema) -> String {
    let block = schema_block(&rep.normalized(), schema);
    render_with_block(&rep.normalized(), question, &block)
}

fn render_with_block(rep: &RepresentationConfig, question: &str, block: &str) -> String {
    let rule = rep.rule.sentence();
    let mut out = String::new();
    match rep.kind {
        RepresentationKind::BasicPrompt => {
            out.push_str(block);
            if let Some(r) = rule {
                out.push_str(&format!("{r}\n"));
            }
            out.push_str(&format!("Q: {question}\nA: SELECT"));
        }
        RepresentationKind::TextRepresentation => {
            out.push_str("Given the following database schema:\n");
            out.push_str(block);
            out.push('\n');
            if let Some(r) = rule {
                out.push_str(&format!("{r}\n"));
            }
            out.push_str(&format!("Answer the following: {question}\nSELECT"));
        }
        RepresentationKind::OpenAiDemonstration => {
            if let Some(r) = rule {
                out.push_str(&format!("### {r}\n"));
            }
            out.push_str("### SQLite SQL tables, with their properties:\n");
            out.push_str(block);
            out.push_str(&format!("### {question}\nSELECT"));
        }
        RepresentationKind::CodeRepresentation => {
            out.push_str("/* Given the following database schema: */\n");
            out.push_str(block);
            if let Some(r) = rule {
                out.push_str(&format!("/* {r} */\n"));
            }
            out.push_str(&format!("/* Answer the following: {question} */\nSELECT "));
        }
        RepresentationKind::AlpacaSft => {
            out.push_str(ALPACA_PREAMBLE);
            out.push_str("\n\n### Instruction:\n");
            if let Some(r) = rule {
                out.push_str(&format!("{r}\n"));
            }
            out.push_str(&format!("Write a sql to answer the question \"{question}\"\n\n### Input:\n"));
            out.push_str(block);
            out.push_str("\n### Response:\nSELECT ");
        }
    }
    out
}

/// Replaces the trailing `SELECT` cue of a rendered question by a full
/// SQL answer.
fn with_answer(rendered: &str, sql: &str) -> String {
    let trimmed = rendered.trim_end_matches(' ');
    let stem = trimmed.strip_suffix("SELECT").unwrap_or(trimmed);
    format!("{stem}{}", sql.trim())
}

/// Renders an example block. `examples` must already be in display order.
pub fn render_examples(
    org: &OrganizationConfig,
    rep: &RepresentationConfig,
    examples: &[Instance],
    schemas: &SchemaSet,
) -> Result<String, PromptError> {
    render_examples_with(org, rep, examples, |ex| {
        schemas
            .get(&ex.db_id)
            .map(|s| schema_block(&rep.normalized(), s))
            .ok_or_else(|| PromptError::UnknownSchema(ex.db_id.clone()))
    })
}

/// Like [`render_examples`], with the FI_O schema block supplied by the
/// caller (used to render schema-agnostic templates).
pub fn render_examples_with(
    org: &OrganizationConfig,
    rep: &RepresentationConfig,
    examples: &[Instance],
    mut block_for: impl FnMut(&Instance) -> Result<String, PromptError>,
) -> Result<String, PromptError> {
    if examples.is_empty() {
        return Ok(String::new());
    }
    let rep = rep.normalized();
    let text = match org.kind {
        OrganizationKind::FullInformation => {
            let mut parts = Vec::with_capacity(examples.len());
            for ex in examples {
                let block = block_for(ex)?;
                parts.push(with_answer(&render_with_block(&rep, &ex.question, &block), &ex.gold_sql));
            }
            parts.join("\n\n")
        }
        OrganizationKind::SqlOnly => {
            let sqls: Vec<&str> = examples.iter().map(|e| e.gold_sql.trim()).collect();
            format!("{SO_HEADER}\n{}", sqls.join("\n\n"))
        }
        OrganizationKind::Dail => {
            let pairs: Vec<String> = examples
                .iter()
                .map(|e| format!("/* Answer the following: {} */\n{}", e.question, e.gold_sql.trim()))
                .collect();
            format!("{DAIL_HEADER}\n{}", pairs.join("\n\n"))
        }
    };
    Ok(text)
}

fn compose(examples_block: &str, target: &str) -> String {
    if examples_block.is_empty() {
        target.to_string()
    } else {
        format!("{examples_block}\n\n{target}")
    }
}

/// Builds the final prompt. `ranked` is in selection priority order (best
/// first); when the budget `context_limit - RESPONSE_RESERVE` is exceeded,
/// the lowest-ranked examples are dropped first.
#[allow(clippy::too_many_arguments)]
pub fn assemble_prompt(
    question: &str,
    schema: &Schema,
    rep: &RepresentationConfig,
    org: &OrganizationConfig,
    ranked: &[Instance],
    schemas: &SchemaSet,
    context_limit: usize,
    counter: &dyn TokenCounter,
) -> Result<RenderedPrompt, PromptError> {
    let rep = rep.normalized();
    let budget = context_limit.saturating_sub(RESPONSE_RESERVE);
    let target = render_question(&rep, question, schema);
    let mut n = org.k.min(ranked.len());
    loop {
        let mut shown: Vec<Instance> = ranked[..n].to_vec();
        if org.order == ExampleOrder::Ascending {
            shown.reverse();
        }
        let text = compose(&render_examples(org, &rep, &shown, schemas)?, &target);
        let token_count = counter.count(&text);
        if token_count <= budget {
            return Ok(RenderedPrompt {
                ends_with_select: text.trim_end().ends_with("SELECT"),
                text,
                token_count,
                examples_included: n,
                representation: rep,
                organization: *org,
            });
        }
        if n == 0 {
            return Err(PromptError::TargetTooLong {
                tokens: token_count,
                budget,
            });
        }
        n -= 1;
    }
}
