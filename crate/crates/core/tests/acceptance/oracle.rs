//! Criterion 2: gold-echo backend scores perfectly under every
//! representation and organization.

use sqlprompt_core::pipeline::run_dataset;
use sqlprompt_core::{OrganizationKind, RepresentationKind, Strategy};

use crate::common::mini;

pub fn check() -> Result<String, String> {
    let m = mini();
    let n = m.data.instances.len();
    if n != 20 {
        return Err(format!("mini dev has {n} instances, expected 20"));
    }
    let ctx = m.context(m.oracle(), Strategy::Dail);
    let mut runs = 0;
    for rep in RepresentationKind::ALL {
        for org in OrganizationKind::ALL {
            let mut cfg = m.config();
            cfg.k = 3;
            cfg.representation.kind = rep;
            cfg.organization.kind = org;
            let out = run_dataset(&m.data.instances, &ctx, &cfg).map_err(|e| e.to_string())?;
            let a = &out.report.aggregates;
            let label = format!("{}+{}", rep.label(), org.label());
            if a.em_scored != n || a.ex_scored != n || a.em_accuracy != 1.0 || a.ex_accuracy != 1.0 {
                let bad: Vec<_> = out.report.per_instance.iter().filter(|r| !(r.em && r.ex)).collect();
                return Err(format!("{label}: em {} ex {} ({} scored); failing rows {bad:?}", a.em_accuracy, a.ex_accuracy, a.em_scored));
            }
            for (entry, inst) in out.prompts.iter().zip(&m.data.instances) {
                let sel = entry.selection.as_ref().ok_or(format!("{label}: no selection logged"))?;
                if sel.chosen.iter().any(|c| c.db_id == inst.db_id) {
                    return Err(format!("{label}: same-database example for {}", inst.id));
                }
                if entry.token_count > cfg.context_limit - 200 || entry.examples_included == 0 {
                    return Err(format!("{label}: bad prompt for {}", inst.id));
                }
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} combinations x {n} instances, EM = EX = 1.0"))
}
