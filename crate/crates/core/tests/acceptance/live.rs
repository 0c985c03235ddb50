//! Criterion 10 (optional): zero-shot OD_P with foreign keys on a random
//! 50-instance Spider-dev sample against a live chat model.
//!
//! Needs `OPENAI_API_KEY` and `SQLPROMPT_SPIDER_DIR` (a directory holding
//! tables.json, dev.json, train.json and database/). `SQLPROMPT_LIVE_ENDPOINT`
//! and `SQLPROMPT_LIVE_MODEL` override the OpenAI defaults.

use std::env;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqlprompt_core::pipeline::{run_dataset, BackendKind, DatasetConfig, RunConfig, RunContext};
use sqlprompt_core::{OrganizationKind, RepresentationKind};

const SAMPLE: usize = 50;
const EXPECTED_EX: f64 = 0.784;
const BAND: f64 = 0.10;

pub fn check() -> Result<String, String> {
    if env::var_os("OPENAI_API_KEY").is_none() {
        return Err("skipped: OPENAI_API_KEY is not set".into());
    }
    let Some(root) = env::var_os("SQLPROMPT_SPIDER_DIR").map(PathBuf::from) else {
        return Err("skipped: SQLPROMPT_SPIDER_DIR is not set".into());
    };
    let mut cfg = RunConfig::dail_sql(DatasetConfig {
        tables: root.join("tables.json"),
        db_root: root.join("database"),
        instances: root.join("dev.json"),
        pool: root.join("train.json"),
    });
    cfg.k = 0;
    cfg.representation.kind = RepresentationKind::OpenAiDemonstration;
    cfg.representation.include_foreign_keys = Some(true);
    cfg.organization.kind = OrganizationKind::FullInformation;
    cfg.backend.kind = BackendKind::Http;
    cfg.backend.model_id = env::var("SQLPROMPT_LIVE_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo".into());
    cfg.backend.endpoint = Some(
        env::var("SQLPROMPT_LIVE_ENDPOINT").unwrap_or_else(|_| "https://api.openai.com/v1/chat/completions".into()),
    );
    cfg.validate().map_err(|e| e.to_string())?;

    let (ctx, mut instances, _) = RunContext::from_config(&cfg).map_err(|e| e.to_string())?;
    instances.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.selection.seed));
    instances.truncate(SAMPLE);
    let out = run_dataset(&instances, &ctx, &cfg).map_err(|e| e.to_string())?;
    let ex = out.report.aggregates.ex_accuracy;
    let detail = format!("{} ex {:.3} on {} instances", cfg.backend.model_id, ex, instances.len());
    if (ex - EXPECTED_EX).abs() > BAND {
        Err(format!("{detail}, outside {EXPECTED_EX} +/- {BAND}"))
    } else {
        Ok(detail)
    }
}
