//! Criterion 7: masking is idempotent and leaves no schema name behind.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlprompt_core::corpus::{Column, Table};
use sqlprompt_core::masking::mask_with_schema;
use sqlprompt_core::Schema;

use crate::common::continents_schema;

const NAME_WORDS: &[&str] = &[
    "singer", "concert", "stadium", "country", "name", "age", "capacity", "city", "population", "pet", "student", "farm",
    "horse", "theme", "year", "weight", "major", "location",
];
const FILLER: &[&str] = &[
    "how", "many", "what", "the", "of", "show", "list", "all", "for", "each", "with", "are", "there", "and", "which",
    "greater", "than", "total", "who", "every", "give", "me",
];

/// Lowercased words of an identifier, split at `_`, spaces and camelCase.
fn name_words(name: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for ch in name.chars() {
        if ch == '_' || ch == ' ' || ch == '-' {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if ch.is_uppercase() && prev_lower && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        prev_lower = ch.is_lowercase();
        cur.extend(ch.to_lowercase());
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

fn singular(w: &str) -> &str {
    match w.strip_suffix('s') {
        Some(s) if !s.is_empty() => s,
        _ => w,
    }
}

fn identifier(rng: &mut ChaCha8Rng) -> String {
    let a = NAME_WORDS[rng.random_range(0..NAME_WORDS.len())];
    if rng.random_bool(0.6) {
        return a.to_string();
    }
    let b = NAME_WORDS[rng.random_range(0..NAME_WORDS.len())];
    match rng.random_range(0..3) {
        0 => format!("{a}_{b}"),
        1 => format!("{a}{}{}", b[..1].to_uppercase(), &b[1..]),
        _ => format!("{}{}_{b}", a[..1].to_uppercase(), &a[1..]),
    }
}

/// How a name may be written in a question.
fn surface(rng: &mut ChaCha8Rng, name: &str) -> String {
    let words = name_words(name);
    match rng.random_range(0..4) {
        0 => name.to_string(),
        1 => words.join(" "),
        2 => format!("{}s", words.join(" ")),
        _ => words.iter().map(|w| w.to_uppercase()).collect::<Vec<_>>().join(" "),
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (String, Schema, Vec<String>) {
    let mut names = Vec::new();
    let tables = (0..rng.random_range(1..4))
        .map(|_| {
            let tname = identifier(rng);
            names.push(tname.clone());
            let columns = (0..rng.random_range(1..5))
                .map(|_| {
                    let c = identifier(rng);
                    names.push(c.clone());
                    Column {
                        name: c,
                        sql_type: "text".into(),
                        is_primary_key: false,
                    }
                })
                .collect();
            Table { name: tname, columns }
        })
        .collect();
    let schema = Schema {
        db_id: "fuzz".into(),
        tables,
        foreign_keys: Vec::new(),
        db_file_path: Default::default(),
    };
    let mut parts = Vec::new();
    for _ in 0..rng.random_range(3..16) {
        match rng.random_range(0..10) {
            0..=5 => parts.push(FILLER[rng.random_range(0..FILLER.len())].to_string()),
            6..=8 => {
                let n = &names[rng.random_range(0..names.len())];
                parts.push(surface(rng, n));
            }
            _ => parts.push(rng.random_range(0..5000).to_string()),
        }
    }
    let mut q = parts.join(" ");
    q.push('?');
    (q, schema, names)
}

/// Independent check: no run of question words spells a schema name.
fn leaked(masked: &str, names: &[String]) -> Option<String> {
    let words: Vec<String> = masked
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| singular(&w.to_lowercase()).to_string())
        .collect();
    for name in names {
        let target: Vec<String> = name_words(name).iter().map(|w| singular(w).to_string()).collect();
        if words.windows(target.len()).any(|w| w == target.as_slice()) {
            return Some(name.clone());
        }
    }
    None
}

pub fn check() -> Result<String, String> {
    let world = continents_schema();
    for (q, want) in [
        ("How many continents are there?", "How many <mask> are there?"),
        ("List each country name and continent.", "List each <mask> and <mask>."),
    ] {
        let got = mask_with_schema(q, &world).masked;
        if got != want {
            return Err(format!("{q:?} masked to {got:?}, expected {want:?}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut links = 0;
    for case in 0..1000 {
        let (q, schema, names) = random_case(&mut rng);
        let once = mask_with_schema(&q, &schema);
        links += once.links.len();
        let twice = mask_with_schema(&once.masked, &schema);
        if twice.masked != once.masked {
            return Err(format!("case {case}: not idempotent: {q:?} -> {:?} -> {:?}", once.masked, twice.masked));
        }
        if let Some(name) = leaked(&once.masked, &names) {
            return Err(format!("case {case}: {name} survives in {:?} (from {q:?})", once.masked));
        }
        if once.masked.chars().any(|c| c.is_ascii_digit()) {
            return Err(format!("case {case}: number survives in {:?}", once.masked));
        }
    }
    Ok(format!("2 fixed examples; 1000 fuzz cases, {links} links"))
}
