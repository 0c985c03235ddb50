//! Prompt engineering and evaluation toolkit for LLM-based text-to-SQL.
//!
//! The crate covers the whole loop: loading Spider-style corpora, analysing
//! SQL (skeletons, clause components, first-statement extraction), masking
//! questions against a schema, embedding and ranking candidates, selecting
//! and organizing few-shot examples, rendering budget-constrained prompts,
//! talking to LLM backends (live, replay, oracle), and scoring the results
//! with exact-set-match and execution accuracy.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod llm;
pub mod masking;
pub mod pipeline;
pub mod promptgen;
pub mod selection;
pub mod sqlkit;
pub mod transport;

pub use corpus::{CandidatePool, Instance, InstanceId, Schema, SchemaSet};
pub use error::{Error, Result};
pub use eval::{EvalReport, PriceTable};
pub use pipeline::{RunConfig, RunOutput};
pub use promptgen::{
    OrganizationConfig, OrganizationKind, RenderedPrompt, RepresentationConfig,
    RepresentationKind, RuleKind,
};
pub use selection::{SelectionConfig, SelectionResult, Strategy};
