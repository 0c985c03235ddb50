//! Post-processing of raw LLM responses: pull out the first SQL statement.

use super::lexer::{tokenize, TokenKind};
use super::parser::parse;
use super::SqlError;

/// Words that may legitimately start a line continuing a SQL statement
/// after a blank line.
const CONTINUATION_WORDS: [&str; 18] = [
    "select", "from", "where", "group", "order", "having", "limit", "union", "intersect",
    "except", "join", "inner", "left", "on", "and", "or", "as", "with",
];

/// Returns the first complete SQL statement in `response`.
///
/// With `prompt_ended_with_select` the response is first read as the
/// continuation of a prompt ending in `SELECT`; if that reading does not
/// parse, the response is scanned for the first `SELECT`/`WITH` instead.
/// Either way a result not starting with `SELECT` (or `WITH`) gets
/// `SELECT ` prepended when the flag is set.
pub fn extract_first_sql(response: &str, prompt_ended_with_select: bool) -> Result<String, SqlError> {
    let body = strip_leading_fence(response);

    if prompt_ended_with_select && !starts_with_query_word(body) {
        let segment = cut_statement(body);
        let candidate = format!("SELECT {segment}");
        if !segment.is_empty() {
            if let Some(sql) = longest_parsing_prefix(&candidate) {
                return Ok(sql.to_string());
            }
        }
        if let Some(start) = find_query_start(body) {
            let sql = cut_statement(&body[start..]);
            return Ok(finish(longest_parsing_prefix(sql).unwrap_or(sql), true));
        }
        // No SELECT anywhere: accept an unparseable continuation as long as
        // it has at least a FROM clause.
        if has_word(segment, "from") {
            return Ok(candidate);
        }
        return Err(SqlError::NoSql(response.to_string()));
    }

    match find_query_start(body) {
        Some(start) => {
            let sql = cut_statement(&body[start..]);
            let sql = longest_parsing_prefix(sql).unwrap_or(sql);
            if sql.is_empty() {
                Err(SqlError::NoSql(response.to_string()))
            } else {
                Ok(finish(sql, prompt_ended_with_select))
            }
        }
        None => Err(SqlError::NoSql(response.to_string())),
    }
}

/// `sql` itself if it parses, else the longest run of its leading lines
/// that does (drops trailing prose such as "This query ...").
fn longest_parsing_prefix(sql: &str) -> Option<&str> {
    if parse(sql).is_ok() {
        return Some(sql);
    }
    let mut end = sql.len();
    while let Some(nl) = sql[..end].rfind('\n') {
        end = nl;
        let prefix = sql[..end].trim_end();
        if !prefix.is_empty() && parse(prefix).is_ok() {
            return Some(prefix);
        }
    }
    None
}

fn finish(sql: &str, prepend: bool) -> String {
    if prepend && !starts_with_query_word(sql) {
        format!("SELECT {sql}")
    } else {
        sql.to_string()
    }
}

fn strip_leading_fence(text: &str) -> &str {
    let t = text.trim_start();
    if let Some(rest) = t.strip_prefix("```") {
        // drop the info string (```sql)
        match rest.find('\n') {
            Some(nl) => rest[nl + 1..].trim_start(),
            None => rest.trim_start_matches(|c: char| c.is_ascii_alphabetic()).trim_start(),
        }
    } else {
        t
    }
}

fn starts_with_query_word(text: &str) -> bool {
    let first: String = text
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    first.eq_ignore_ascii_case("select") || first.eq_ignore_ascii_case("with")
}

fn has_word(text: &str, word: &str) -> bool {
    tokenize(text)
        .map(|toks| toks.iter().any(|t| t.is_word(word)))
        .unwrap_or(false)
}

/// Byte offset of the first standalone SELECT or WITH keyword.
fn find_query_start(text: &str) -> Option<usize> {
    let lower = text.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let is_word_byte = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut best: Option<usize> = None;
    for kw in ["select", "with"] {
        let mut from = 0;
        while let Some(off) = lower[from..].find(kw) {
            let at = from + off;
            let end = at + kw.len();
            let before_ok = at == 0 || !is_word_byte(bytes[at - 1]);
            let after_ok = end >= bytes.len() || !is_word_byte(bytes[end]);
            // `WITH` only counts when followed by `name AS (`.
            let ok = before_ok && after_ok && (kw == "select" || looks_like_cte(&text[end..]));
            if ok {
                best = Some(best.map_or(at, |b: usize| b.min(at)));
                break;
            }
            from = at + 1;
        }
    }
    best
}

fn looks_like_cte(rest: &str) -> bool {
    let toks = match tokenize(rest.lines().next().unwrap_or("")) {
        Ok(t) => t,
        Err(_) => return false,
    };
    toks.len() >= 3
        && matches!(toks[0].kind, TokenKind::Word | TokenKind::QuotedIdent)
        && toks[1].is_word("as")
        && toks[2].kind == TokenKind::LParen
}

/// Cuts `text` at the first statement terminator outside quotes, code
/// fence, or blank line followed by prose.
fn cut_statement(text: &str) -> &str {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let b = bytes[i];
        if let Some(q) = quote {
            if b == q {
                quote = None;
            }
            i += 1;
            continue;
        }
        match b {
            b'`' if text[i..].starts_with("```") => return text[..i].trim(),
            b'\'' | b'"' | b'`' => quote = Some(b),
            b';' => return text[..i].trim(),
            b'\n' => {
                if text[i + 1..].starts_with("```") {
                    return text[..i].trim();
                }
                // blank line: look at the next non-empty line
                let rest = &text[i + 1..];
                let after_ws = rest.trim_start_matches([' ', '\t', '\r']);
                if after_ws.starts_with('\n') {
                    let next_line = after_ws.trim_start();
                    if !continues_sql(next_line) {
                        return text[..i].trim();
                    }
                }
            }
            _ => {}
        }
        i += 1;
    }
    // A lone backtick fence start is caught above; also stop at a fence that
    // begins mid-line.
    match text.find("```") {
        Some(f) => text[..f].trim(),
        None => text.trim(),
    }
}

fn continues_sql(line: &str) -> bool {
    if line.starts_with(')') || line.starts_with('(') {
        return true;
    }
    let first: String = line.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    CONTINUATION_WORDS.iter().any(|w| w.eq_ignore_ascii_case(&first))
}
