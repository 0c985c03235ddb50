//! SQL text analysis: tokenizing, parsing, skeletons, clause components and
//! first-statement extraction from model output.

pub mod ast;
mod components;
mod extract;
pub mod lexer;
pub mod parser;
mod skeleton;

use thiserror::Error;

pub use components::{decompose_components, decompose_with_schema, ComponentSet};
pub use extract::extract_first_sql;
pub use parser::parse;
pub use skeleton::{extract_skeleton, Skeleton, PLACEHOLDER, SKELETON_KEYWORDS};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SqlError {
    #[error("lex error at byte {offset}: {reason}")]
    Lex { offset: usize, reason: String },
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("no SQL found in response: {0:?}")]
    NoSql(String),
}

/// True when the query's final result carries an ORDER BY.
pub fn has_top_level_order_by(sql: &str) -> bool {
    match parse(sql) {
        Ok(p) => !p.query.final_order_by().is_empty(),
        Err(_) => lexical_top_level_order_by(sql),
    }
}

fn lexical_top_level_order_by(sql: &str) -> bool {
    let toks = match lexer::tokenize(sql) {
        Ok(t) => t,
        Err(_) => return false,
    };
    let mut depth = 0i32;
    toks.windows(2).any(|w| {
        match w[0].kind {
            lexer::TokenKind::LParen => depth += 1,
            lexer::TokenKind::RParen => depth -= 1,
            _ => {}
        }
        depth == 0 && w[0].is_word("order") && w[1].is_word("by")
    })
}
