//! Schema linking by n-gram matching, and question masking.
//!
//! Question n-grams (longest first, 5 down to 1 words) are matched against
//! table and column names after normalization: lowercase, underscores
//! dropped, camel-case split, and a trailing `s` folded off each word.
//! Numerals and quoted spans are always value links. Matched table/column
//! spans become `<mask>`, value spans become `<unk>`.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Schema;

pub const MASK_TOKEN: &str = "<mask>";
pub const UNK_TOKEN: &str = "<unk>";
const MAX_NGRAM: usize = 5;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("links overlap at token {0}")]
    Overlap(usize),
    #[error("link span {start}..{end} is outside the {len}-token question")]
    OutOfBounds { start: usize, end: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkTarget {
    Table,
    Column,
    Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    /// Token range in the question's tokenization.
    pub span: Range<usize>,
    pub target: LinkTarget,
    /// The schema name matched, or the literal text for value links.
    pub matched_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedQuestion {
    pub original: String,
    pub masked: String,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QKind {
    Word,
    Number,
    Quoted,
    Special,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QToken {
    pub text: String,
    pub range: Range<usize>,
    kind: QKind,
}

/// Splits a question into words, numbers, quoted spans, mask placeholders
/// and single punctuation characters, with byte ranges.
pub fn tokenize_question(q: &str) -> Vec<QToken> {
    let mut out = Vec::new();
    let mut iter = q.char_indices().peekable();
    while let Some((start, c)) = iter.next() {
        if c.is_whitespace() {
            continue;
        }
        let rest = &q[start..];
        for special in [MASK_TOKEN, UNK_TOKEN] {
            if rest.starts_with(special) {
                let end = start + special.len();
                while iter.peek().is_some_and(|&(i, _)| i < end) {
                    iter.next();
                }
                out.push(QToken {
                    text: special.to_string(),
                    range: start..end,
                    kind: QKind::Special,
                });
            }
        }
        if out.last().is_some_and(|t| t.range.start == start) {
            continue;
        }
        if c == '"' || c == '\'' || c == '“' || c == '‘' {
            let close = match c {
                '“' => '”',
                '‘' => '’',
                other => other,
            };
            // An apostrophe inside a word (e.g. "singer's") is not a quote.
            let opens = c != '\'' || start == 0 || !q[..start].ends_with(|p: char| p.is_alphanumeric());
            if opens {
                if let Some(off) = q[start + c.len_utf8()..].find(close) {
                    let end = start + c.len_utf8() + off + close.len_utf8();
                    while iter.peek().is_some_and(|&(i, _)| i < end) {
                        iter.next();
                    }
                    out.push(QToken {
                        text: q[start..end].to_string(),
                        range: start..end,
                        kind: QKind::Quoted,
                    });
                    continue;
                }
            }
        }
        if c.is_ascii_digit() {
            let mut end = start + 1;
            while let Some(&(i, d)) = iter.peek() {
                let decimal_point = d == '.' && q[i + 1..].starts_with(|n: char| n.is_ascii_digit());
                if d.is_ascii_digit() || decimal_point || d == ',' && q[i + 1..].starts_with(|n: char| n.is_ascii_digit()) {
                    iter.next();
                    end = i + d.len_utf8();
                } else {
                    break;
                }
            }
            out.push(QToken {
                text: q[start..end].to_string(),
                range: start..end,
                kind: QKind::Number,
            });
            continue;
        }
        if c.is_alphanumeric() || c == '_' {
            let mut end = start + c.len_utf8();
            while let Some(&(i, d)) = iter.peek() {
                if d.is_alphanumeric() || d == '_' {
                    iter.next();
                    end = i + d.len_utf8();
                } else {
                    break;
                }
            }
            out.push(QToken {
                text: q[start..end].to_string(),
                range: start..end,
                kind: QKind::Word,
            });
            continue;
        }
        out.push(QToken {
            text: c.to_string(),
            range: start..start + c.len_utf8(),
            kind: QKind::Punct,
        });
    }
    out
}

/// Normalized words of a schema name: split on `_`, spaces and camel-case
/// boundaries, lowercased, trailing `s` folded.
fn name_words(name: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = name.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' || c == ' ' || c == '-' {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let boundary = i > 0
            && c.is_uppercase()
            && (chars[i - 1].is_lowercase()
                || chars.get(i + 1).is_some_and(|n| n.is_lowercase()) && chars[i - 1].is_uppercase());
        if boundary && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words.iter().map(|w| fold(w)).collect()
}

fn fold(word: &str) -> String {
    let lower = word.to_lowercase();
    match lower.strip_suffix('s') {
        Some(stem) if !stem.is_empty() => stem.to_string(),
        _ => lower,
    }
}

/// Matching key: folded words joined without separators, so that
/// `country_name`, `CountryName` and "country names" all agree.
fn key_of(words: &[String]) -> String {
    words.concat()
}

/// Name index for one schema: normalized key -> (target, original name).
struct NameIndex {
    names: HashMap<String, (LinkTarget, String)>,
}

impl NameIndex {
    fn new(schema: &Schema) -> Self {
        let mut names: HashMap<String, (LinkTarget, String)> = HashMap::new();
        // Columns first so that tables overwrite on a shared key.
        for table in &schema.tables {
            for col in &table.columns {
                let key = key_of(&name_words(&col.name));
                if !key.is_empty() {
                    names.entry(key).or_insert((LinkTarget::Column, col.name.clone()));
                }
            }
        }
        for table in &schema.tables {
            let key = key_of(&name_words(&table.name));
            if !key.is_empty() {
                names.insert(key, (LinkTarget::Table, table.name.clone()));
            }
        }
        Self { names }
    }
}

/// Links question spans to the schema (tables/columns) and to values.
pub fn schema_link(question: &str, schema: &Schema) -> Vec<Link> {
    let tokens = tokenize_question(question);
    let index = NameIndex::new(schema);
    let mut taken = vec![false; tokens.len()];
    let mut links = Vec::new();

    for (i, tok) in tokens.iter().enumerate() {
        if matches!(tok.kind, QKind::Number | QKind::Quoted) {
            taken[i] = true;
            links.push(Link {
                span: i..i + 1,
                target: LinkTarget::Value,
                matched_name: tok.text.clone(),
            });
        }
    }

    let folded: Vec<Option<String>> = tokens
        .iter()
        .map(|t| (t.kind == QKind::Word).then(|| fold(&t.text.replace('_', ""))))
        .collect();

    for n in (1..=MAX_NGRAM).rev() {
        let mut i = 0;
        while i + n <= tokens.len() {
            let window = i..i + n;
            if taken[window.clone()].iter().any(|&t| t) || folded[window.clone()].iter().any(Option::is_none) {
                i += 1;
                continue;
            }
            let words: Vec<String> = folded[window.clone()].iter().map(|w| w.clone().unwrap()).collect();
            match index.names.get(&key_of(&words)) {
                Some((target, name)) => {
                    taken[window.clone()].iter_mut().for_each(|t| *t = true);
                    links.push(Link {
                        span: window,
                        target: *target,
                        matched_name: name.clone(),
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
    }
    links.sort_by_key(|l| l.span.start);
    links
}

/// Replaces each linked span by its mask token; everything else is kept
/// verbatim.
pub fn mask_question(question: &str, links: &[Link]) -> Result<MaskedQuestion, MaskError> {
    let tokens = tokenize_question(question);
    let mut sorted: Vec<&Link> = links.iter().collect();
    sorted.sort_by_key(|l| l.span.start);
    let mut prev_end = 0;
    for l in &sorted {
        if l.span.start >= l.span.end || l.span.end > tokens.len() {
            return Err(MaskError::OutOfBounds {
                start: l.span.start,
                end: l.span.end,
                len: tokens.len(),
            });
        }
        if l.span.start < prev_end {
            return Err(MaskError::Overlap(l.span.start));
        }
        prev_end = l.span.end;
    }
    let mut masked = String::with_capacity(question.len());
    let mut cursor = 0;
    for l in &sorted {
        let start = tokens[l.span.start].range.start;
        let end = tokens[l.span.end - 1].range.end;
        masked.push_str(&question[cursor..start]);
        masked.push_str(match l.target {
            LinkTarget::Value => UNK_TOKEN,
            LinkTarget::Table | LinkTarget::Column => MASK_TOKEN,
        });
        cursor = end;
    }
    masked.push_str(&question[cursor..]);
    Ok(MaskedQuestion {
        original: question.to_string(),
        masked,
        links: links.to_vec(),
    })
}

/// Links and masks in one step.
pub fn mask_with_schema(question: &str, schema: &Schema) -> MaskedQuestion {
    let links = schema_link(question, schema);
    mask_question(question, &links).expect("schema_link produces non-overlapping in-bounds links")
}

/// Lowercased word-level tokens used for question Jaccard similarity.
pub fn question_token_set(text: &str) -> std::collections::BTreeSet<String> {
    tokenize_question(text)
        .into_iter()
        .filter(|t| t.kind != QKind::Punct)
        .map(|t| t.text.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Column, Table};

    fn col(n: &str) -> Column {
        Column {
            name: n.into(),
            sql_type: "text".into(),
            is_primary_key: false,
        }
    }

    fn continents() -> Schema {
        Schema {
            db_id: "world".into(),
            tables: vec![
                Table { name: "continents".into(), columns: vec![col("ContId"), col("Continent")] },
                Table { name: "countries".into(), columns: vec![col("CountryId"), col("CountryName"), col("Continent")] },
            ],
            foreign_keys: vec![],
            db_file_path: Default::default(),
        }
    }

    fn singers() -> Schema {
        Schema {
            db_id: "concert".into(),
            tables: vec![Table { name: "singer".into(), columns: vec![col("Name"), col("Age"), col("Country")] }],
            foreign_keys: vec![],
            db_file_path: Default::default(),
        }
    }

    #[test]
    fn continents_question_links_the_table() {
        let q = "How many continents are there?";
        let links = schema_link(q, &continents());
        assert_eq!(
            links,
            vec![Link { span: 2..3, target: LinkTarget::Table, matched_name: "continents".into() }]
        );
        let m = mask_question(q, &links).unwrap();
        assert_eq!(m.masked, "How many <mask> are there?");
    }

    #[test]
    fn unrelated_question_has_no_links() {
        let q = "What is the weather?";
        assert!(schema_link(q, &continents()).is_empty());
        assert_eq!(mask_question(q, &[]).unwrap().masked, q);
    }

    #[test]
    fn numerals_are_values() {
        let q = "singers older than 30";
        let links = schema_link(q, &singers());
        assert!(links.contains(&Link { span: 3..4, target: LinkTarget::Value, matched_name: "30".into() }));
        // "singers" folds to "singer", the table.
        assert!(links.iter().any(|l| l.target == LinkTarget::Table && l.span == (0..1)));
        let value_only: Vec<Link> = links.into_iter().filter(|l| l.target == LinkTarget::Value).collect();
        assert_eq!(mask_question(q, &value_only).unwrap().masked, "singers older than <unk>");
    }

    #[test]
    fn longest_ngram_wins() {
        let q = "List each country name and continent.";
        let links = schema_link(q, &continents());
        let spans: Vec<_> = links.iter().map(|l| (l.span.clone(), l.matched_name.as_str())).collect();
        assert_eq!(spans, vec![(2..4, "CountryName"), (5..6, "continents")]);
        assert_eq!(
            mask_with_schema(q, &continents()).masked,
            "List each <mask> and <mask>."
        );
    }

    #[test]
    fn table_beats_column_on_same_span() {
        // `continent` is both a column and (after folding) the table `continents`.
        let links = schema_link("continent", &continents());
        assert_eq!(links[0].target, LinkTarget::Table);
    }

    #[test]
    fn quoted_values_and_possessives() {
        let m = mask_with_schema("What is the singer's age for name 'Joe Sharp'?", &singers());
        assert_eq!(m.masked, "What is the <mask>'s <mask> for <mask> <unk>?");
    }

    #[test]
    fn overlapping_links_are_rejected() {
        let links = vec![
            Link { span: 0..2, target: LinkTarget::Column, matched_name: "a".into() },
            Link { span: 1..3, target: LinkTarget::Column, matched_name: "b".into() },
        ];
        assert_eq!(mask_question("a b c", &links), Err(MaskError::Overlap(1)));
        let oob = vec![Link { span: 2..9, target: LinkTarget::Value, matched_name: "x".into() }];
        assert!(matches!(mask_question("a b c", &oob), Err(MaskError::OutOfBounds { .. })));
    }

    #[test]
    fn masks_are_fixed_points() {
        let s = continents();
        let once = mask_with_schema("How many countries are in each continent with id 3?", &s);
        let twice = mask_with_schema(&once.masked, &s);
        assert!(twice.links.iter().all(|l| l.target == LinkTarget::Value) || twice.links.is_empty());
        assert_eq!(twice.masked, once.masked);
    }

    #[test]
    fn renamed_schemas_give_identical_masks() {
        let a = mask_with_schema("How many continents are there?", &continents());
        let b = mask_with_schema("How many singers are there?", &singers());
        assert_eq!(a.masked, b.masked);
    }
}
