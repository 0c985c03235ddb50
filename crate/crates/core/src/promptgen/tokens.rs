//! Token counters used for prompt budgets and efficiency reports.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use super::PromptError;

pub trait TokenCounter: Send + Sync {
    /// Label written into reports next to the numbers this counter produced.
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Offline approximation: each maximal alphanumeric run counts
/// `ceil(chars / 4)`, each other non-whitespace character counts 1,
/// whitespace counts 0.
#[derive(Debug, Default, Clone, Copy)]
pub struct ApproxCounter;

impl TokenCounter for ApproxCounter {
    fn name(&self) -> &str {
        "approx"
    }

    fn count(&self, text: &str) -> usize {
        let mut total = 0;
        let mut run = 0usize;
        for c in text.chars() {
            if c.is_alphanumeric() {
                run += 1;
                continue;
            }
            total += run.div_ceil(4);
            run = 0;
            if !c.is_whitespace() {
                total += 1;
            }
        }
        total + run.div_ceil(4)
    }
}

/// Byte-level BPE counter driven by a GPT-2 style `merges.txt`.
pub struct BpeCounter {
    name: String,
    ranks: HashMap<(String, String), usize>,
    byte_chars: [char; 256],
    cache: Mutex<HashMap<String, usize>>,
}

/// GPT-2's reversible byte -> printable char table.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            extra += 1;
            char::from_u32(255 + extra).expect("valid code point")
        };
    }
    table
}

impl BpeCounter {
    pub fn from_merges_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Tokenizer(format!("{}: {e}", path.display())))?;
        let name = format!("bpe:{}", path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default());
        Self::from_merges(&text, name)
    }

    pub fn from_merges(text: &str, name: impl Into<String>) -> Result<Self, PromptError> {
        let mut ranks = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => {
                    let rank = ranks.len();
                    ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
                }
                _ => return Err(PromptError::Tokenizer(format!("bad merge on line {}", lineno + 1))),
            }
        }
        Ok(Self {
            name: name.into(),
            ranks,
            byte_chars: bytes_to_unicode(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn count_piece(&self, piece: &str) -> usize {
        if let Some(&n) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(piece) {
            return n;
        }
        let mut symbols: Vec<String> = piece.bytes().map(|b| self.byte_chars[b as usize].to_string()).collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols.splice(i..i + 2, [merged]);
        }
        let n = symbols.len();
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).insert(piece.to_string(), n);
        n
    }
}

impl TokenCounter for BpeCounter {
    fn name(&self) -> &str {
        &self.name
    }

    fn count(&self, text: &str) -> usize {
        pretokenize(text).into_iter().map(|p| self.count_piece(p)).sum()
    }
}

/// GPT-2 pre-tokenization:
/// `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let is_other = |c: char| !c.is_whitespace() && !c.is_alphabetic() && !c.is_numeric();
    let run = |from: usize, pred: &dyn Fn(char) -> bool| {
        let mut j = from;
        while j < chars.len() && pred(chars[j].1) {
            j += 1;
        }
        j
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c == '\'' {
            let rest = &text[chars[i].0 + 1..];
            if let Some(suf) = ["s", "t", "re", "ve", "m", "ll", "d"].iter().find(|s| rest.starts_with(*s)) {
                let j = i + 1 + suf.len();
                out.push(&text[chars[i].0..end_of(j)]);
                i = j;
                continue;
            }
        }
        let (start, head) = if c == ' ' && i + 1 < chars.len() && !chars[i + 1].1.is_whitespace() {
            (i, i + 1)
        } else {
            (i, i)
        };
        let hc = chars[head].1;
        let j = if hc.is_alphabetic() {
            run(head, &|c| c.is_alphabetic())
        } else if hc.is_numeric() {
            run(head, &|c| c.is_numeric())
        } else if is_other(hc) {
            run(head, &is_other)
        } else {
            let j = run(i, &|c| c.is_whitespace());
            if j < chars.len() && j - i > 1 {
                j - 1
            } else {
                j
            }
        };
        out.push(&text[chars[start].0..end_of(j)]);
        i = j;
    }
    out
}
