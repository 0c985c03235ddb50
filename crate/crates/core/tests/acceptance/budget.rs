//! Criterion 6: prompts never exceed `limit - 200` tokens, and a larger
//! limit never admits fewer examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlprompt_core::promptgen::{
    assemble_prompt, render_examples, render_question, ApproxCounter, ExampleOrder, TokenCounter, RESPONSE_RESERVE,
};
use sqlprompt_core::{Instance, OrganizationConfig, OrganizationKind, RepresentationConfig, RepresentationKind, SchemaSet};

use crate::common::{continents_schema, instance};

const WORDS: &[&str] = &["how", "many", "continents", "population", "average", "x", "countryname", "per", "listing", "q"];

fn text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn check() -> Result<String, String> {
    let schema = continents_schema();
    let schemas = SchemaSet::new([schema.clone()]);
    let counter = ApproxCounter;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut calls = 0;
    let mut truncated = 0;
    while calls < 1000 {
        let rep = RepresentationConfig::new(RepresentationKind::ALL[rng.random_range(0..5)]);
        let org = OrganizationConfig {
            kind: OrganizationKind::ALL[rng.random_range(0..3)],
            k: rng.random_range(0..25),
            order: if rng.random_bool(0.5) { ExampleOrder::Ascending } else { ExampleOrder::Descending },
        };
        let n = rng.random_range(0..30);
        let ranked: Vec<Instance> = (0..n)
            .map(|i| {
                let q = text(&mut rng, 300);
                let sql = format!("SELECT {} FROM countries", text(&mut rng, 200).replace(' ', ", "));
                instance("train", i, "world", &q, &sql)
            })
            .collect();
        let question = text(&mut rng, 40);
        let mut included = Vec::new();
        for limit in [2048usize, 4096] {
            let p = assemble_prompt(&question, &schema, &rep, &org, &ranked, &schemas, limit, &counter)
                .map_err(|e| e.to_string())?;
            calls += 1;
            let budget = limit - RESPONSE_RESERVE;
            let recount = counter.count(&p.text);
            if p.token_count != recount || recount > budget {
                return Err(format!("limit {limit}: reported {} tokens, recounted {recount}, budget {budget}", p.token_count));
            }
            let cap = org.k.min(ranked.len());
            if p.examples_included > cap {
                return Err(format!("included {} of at most {cap}", p.examples_included));
            }
            // One more example must not have fit.
            if p.examples_included < cap {
                truncated += 1;
                let mut shown = ranked[..=p.examples_included].to_vec();
                if org.order == ExampleOrder::Ascending {
                    shown.reverse();
                }
                let block = render_examples(&org, &rep, &shown, &schemas).map_err(|e| e.to_string())?;
                let bigger = format!("{block}\n\n{}", render_question(&rep, &question, &schema));
                if counter.count(&bigger) <= budget {
                    return Err(format!("limit {limit}: dropped an example that fits"));
                }
            }
            included.push(p.examples_included);
        }
        if included[0] > included[1] {
            return Err(format!("examples_included not monotone in limit: {included:?}"));
        }
    }
    Ok(format!("{calls} calls within budget, {truncated} truncated maximally"))
}
