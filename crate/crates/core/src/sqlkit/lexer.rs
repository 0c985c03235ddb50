//! A permissive SQLite-dialect tokenizer.
//!
//! Double-quoted text is lexed as a string literal, which is how the Spider
//! corpus uses it (`WHERE name = "Bob"`).

use super::SqlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    /// `[name]` or `` `name` ``.
    QuotedIdent,
    String,
    Number,
    Op,
    LParen,
    RParen,
    Comma,
    Dot,
    Semicolon,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offsets into the source.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_word(&self, w: &str) -> bool {
        self.kind == TokenKind::Word && self.text.eq_ignore_ascii_case(w)
    }

    pub fn lower(&self) -> String {
        self.text.to_ascii_lowercase()
    }
}

const TWO_CHAR_OPS: [&str; 8] = ["<=", ">=", "<>", "!=", "==", "||", "<<", ">>"];

pub fn tokenize(src: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            match src[i + 2..].find("*/") {
                Some(off) => i = i + 2 + off + 2,
                None => i = bytes.len(),
            }
            continue;
        }
        let start = i;
        let kind = match c {
            b'\'' | b'"' => {
                i = scan_quoted(bytes, i, c).ok_or(SqlError::Lex {
                    offset: start,
                    reason: "unterminated string literal".into(),
                })?;
                TokenKind::String
            }
            b'`' | b'[' => {
                let close = if c == b'`' { b'`' } else { b']' };
                let end = bytes[i + 1..]
                    .iter()
                    .position(|&b| b == close)
                    .ok_or(SqlError::Lex {
                        offset: start,
                        reason: "unterminated quoted identifier".into(),
                    })?;
                i = i + 1 + end + 1;
                TokenKind::QuotedIdent
            }
            b'0'..=b'9' => {
                i = scan_number(bytes, i);
                TokenKind::Number
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i = scan_number(bytes, i);
                TokenKind::Number
            }
            b'(' => {
                i += 1;
                TokenKind::LParen
            }
            b')' => {
                i += 1;
                TokenKind::RParen
            }
            b',' => {
                i += 1;
                TokenKind::Comma
            }
            b'.' => {
                i += 1;
                TokenKind::Dot
            }
            b';' => {
                i += 1;
                TokenKind::Semicolon
            }
            _ if c == b'_' || c.is_ascii_alphabetic() || c >= 0x80 => {
                while i < bytes.len() {
                    let b = bytes[i];
                    if b == b'_' || b == b'$' || b.is_ascii_alphanumeric() || b >= 0x80 {
                        i += 1;
                    } else {
                        break;
                    }
                }
                TokenKind::Word
            }
            _ => {
                let two = src.get(i..i + 2);
                if two.is_some_and(|t| TWO_CHAR_OPS.contains(&t)) {
                    i += 2;
                    TokenKind::Op
                } else if b"=<>+-*/%&|~!".contains(&c) {
                    i += 1;
                    TokenKind::Op
                } else {
                    i += src[i..].chars().next().map_or(1, char::len_utf8);
                    TokenKind::Other
                }
            }
        };
        out.push(Token {
            kind,
            text: src[start..i].to_string(),
            start,
            end: i,
        });
    }
    Ok(out)
}

/// Returns the index one past the closing quote; doubled quotes escape.
fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> Option<usize> {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return Some(i + 1);
        }
        i += 1;
    }
    None
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    i
}
