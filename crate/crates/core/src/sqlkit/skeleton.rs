//! Query skeletons: SQL with every database-specific token replaced by `_`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ast::AGGREGATES;
use super::lexer::{tokenize, Token, TokenKind};
use super::parser::{parse, Role};

pub const PLACEHOLDER: &str = "_";

/// Structural keywords kept verbatim in a skeleton.
pub const SKELETON_KEYWORDS: [&str; 31] = [
    "select", "from", "where", "group", "by", "having", "order", "limit", "distinct", "and", "or",
    "not", "in", "exists", "like", "between", "is", "null", "union", "intersect", "except", "join",
    "on", "as", "asc", "desc", "case", "when", "then", "else", "end",
];

const KEPT_OPERATORS: [&str; 14] = [
    "=", "==", "!=", "<>", "<", ">", "<=", ">=", "+", "-", "*", "/", "%", "||",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_set: BTreeSet<String>,
    /// Set when the SQL did not parse and only lexical classification was used.
    pub degraded: bool,
}

impl Skeleton {
    fn from_tokens(tokens: Vec<String>, degraded: bool) -> Self {
        let mut collapsed: Vec<String> = Vec::with_capacity(tokens.len());
        for t in tokens {
            if t == PLACEHOLDER && collapsed.last().is_some_and(|p| p == PLACEHOLDER) {
                continue;
            }
            collapsed.push(t);
        }
        Skeleton {
            text: collapsed.join(" "),
            token_set: collapsed.iter().cloned().collect(),
            tokens: collapsed,
            degraded,
        }
    }
}

fn is_kept_word(lower: &str) -> bool {
    SKELETON_KEYWORDS.contains(&lower) || AGGREGATES.contains(&lower)
}

/// Lexical classification of a single token, ignoring parse roles.
fn classify(tok: &Token) -> Option<String> {
    match tok.kind {
        TokenKind::Semicolon => None,
        TokenKind::LParen => Some("(".into()),
        TokenKind::RParen => Some(")".into()),
        TokenKind::Comma => Some(",".into()),
        TokenKind::Op if KEPT_OPERATORS.contains(&tok.text.as_str()) => Some(tok.text.clone()),
        TokenKind::Word => {
            let lower = tok.lower();
            if is_kept_word(&lower) {
                Some(lower)
            } else {
                Some(PLACEHOLDER.into())
            }
        }
        _ => Some(PLACEHOLDER.into()),
    }
}

/// Extracts the skeleton of `sql`. Unparseable input falls back to lexical
/// keyword filtering and is flagged `degraded`; input that does not even
/// lex yields an empty degraded skeleton.
pub fn extract_skeleton(sql: &str) -> Skeleton {
    match parse(sql) {
        Ok(parsed) => {
            let tokens = parsed
                .tokens
                .iter()
                .zip(&parsed.roles)
                .filter_map(|(tok, role)| match role {
                    Role::Identifier | Role::Literal => Some(PLACEHOLDER.to_string()),
                    Role::Structural => classify(tok),
                })
                .collect();
            Skeleton::from_tokens(tokens, false)
        }
        Err(_) => {
            let tokens = tokenize(sql)
                .map(|toks| toks.iter().filter_map(classify).collect())
                .unwrap_or_default();
            Skeleton::from_tokens(tokens, true)
        }
    }
}
