//! Criterion 9: a recorded run replays to byte-identical reports.

use std::collections::HashMap;
use std::sync::Arc;

use sqlprompt_core::embedding::fnv1a;
use sqlprompt_core::llm::{Backend, CannedBackend, RecordingBackend, ReplayBackend};
use sqlprompt_core::pipeline::{run_dataset, RunOutput};
use sqlprompt_core::promptgen::ApproxCounter;
use sqlprompt_core::Strategy;

use crate::common::mini;

fn report_bytes(out: &RunOutput) -> String {
    serde_json::to_string_pretty(&out.report).unwrap()
}

pub fn check() -> Result<String, String> {
    let m = mini();
    let gold: HashMap<String, String> = m
        .data
        .instances
        .iter()
        .chain(&m.data.pool.instances)
        .map(|i| (i.id.as_str().to_string(), i.gold_sql.clone()))
        .collect();
    // Deterministic mix of right, wrong and unusable answers.
    let canned = CannedBackend::new(Arc::new(ApproxCounter), move |req| {
        let id = req.instance_id.clone().unwrap_or_default();
        let h = fnv1a(id.as_bytes()).wrapping_add(u64::from(req.sample_index));
        match h % 4 {
            0 => "SELECT count(*) FROM nowhere".to_string(),
            1 => "I am not sure.".to_string(),
            _ => format!("{}\nThis query answers the question.", gold[&id]),
        }
    });
    let fixtures = m.dir.path().join("fixtures");
    let mut cfg = m.config();
    cfg.k = 3;
    cfg.self_consistency_n = 5;

    let recorder: Arc<dyn Backend> = Arc::new(RecordingBackend::new(canned, &fixtures).map_err(|e| e.to_string())?);
    let recorded = run_dataset(&m.data.instances, &m.context(recorder, Strategy::Dail), &cfg).map_err(|e| e.to_string())?;

    let mut replays = Vec::new();
    for _ in 0..2 {
        let replay: Arc<dyn Backend> = Arc::new(ReplayBackend::load(&fixtures).map_err(|e| e.to_string())?);
        replays.push(run_dataset(&m.data.instances, &m.context(replay, Strategy::Dail), &cfg).map_err(|e| e.to_string())?);
    }
    let base = report_bytes(&recorded);
    for (i, r) in replays.iter().enumerate() {
        if report_bytes(r) != base {
            return Err(format!("replay {} report differs from the recorded run", i + 1));
        }
        if r.predictions != recorded.predictions || r.prompts != recorded.prompts {
            return Err(format!("replay {} predictions or prompts differ", i + 1));
        }
    }
    if let Some(bad) = recorded.predictions.iter().find(|p| p.error.is_some()) {
        return Err(format!("recorded run has an instance error: {bad:?}"));
    }
    let a = &recorded.report.aggregates;
    Ok(format!("3 reports identical ({} bytes, ex {:.2}, em {:.2})", base.len(), a.ex_accuracy, a.em_accuracy))
}
