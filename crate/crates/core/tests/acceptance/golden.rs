//! Criterion 1: byte-exact prompt templates on the continents schema.

use sqlprompt_core::promptgen::{render_examples_with, render_question};
use sqlprompt_core::{OrganizationConfig, OrganizationKind, RepresentationConfig, RepresentationKind};

use crate::common::{continents_schema, golden, instance};

const QUESTION: &str = "How many continents are there?";

fn compare(name: &str, got: &str) -> Result<(), String> {
    let want = golden(name);
    if got == want {
        Ok(())
    } else {
        Err(format!("{name} differs:\n--- expected\n{want}\n--- got\n{got}"))
    }
}

pub fn check() -> Result<String, String> {
    let schema = continents_schema();
    let reps = [
        ("bs_p.txt", RepresentationKind::BasicPrompt),
        ("tr_p.txt", RepresentationKind::TextRepresentation),
        ("od_p.txt", RepresentationKind::OpenAiDemonstration),
        ("cr_p.txt", RepresentationKind::CodeRepresentation),
        ("as_p.txt", RepresentationKind::AlpacaSft),
    ];
    for (file, kind) in reps {
        compare(file, &render_question(&RepresentationConfig::new(kind), QUESTION, &schema))?;
    }

    let cr = RepresentationConfig::new(RepresentationKind::CodeRepresentation);
    let authors = instance("train", 0, "book_2", "How many authors are there?", "SELECT count(*) FROM authors");
    let farms = instance("train", 1, "farm", "How many farms are there?", "SELECT count(*) FROM farm");
    let farms_dotted = instance("train", 1, "farm", "How many farms are there?.", "SELECT count(*) FROM farm");
    let orgs = [
        ("fi_o.txt", OrganizationKind::FullInformation, [authors.clone(), farms.clone()]),
        ("so_o.txt", OrganizationKind::SqlOnly, [authors.clone(), farms]),
        ("dail_o.txt", OrganizationKind::Dail, [authors, farms_dotted]),
    ];
    for (file, kind, examples) in orgs {
        let block = render_examples_with(&OrganizationConfig::new(kind, 2), &cr, &examples, |_| {
            Ok("${DATABASE_SCHEMA}\n".to_string())
        })
        .map_err(|e| e.to_string())?;
        compare(file, &format!("{block}\n\n${{TARGET_QUESTION}}"))?;
    }
    Ok("8/8 templates byte-identical".into())
}
