//! Criterion 8: self-consistency voting against a brute-force oracle.

use sqlprompt_core::eval::{Cell, Row};
use sqlprompt_core::llm::vote;

/// Outcome 0..3 is a distinct result; 3 is an execution failure. Row order
/// varies with the candidate index, which must not split a group.
fn rows(outcome: usize, index: usize) -> Option<Vec<Row>> {
    let mut r = match outcome {
        0 => vec![vec![Cell::Integer(1)]],
        1 => vec![vec![Cell::Integer(2)], vec![Cell::Real(3.0)]],
        2 => vec![vec![Cell::Text("a".into())], vec![Cell::Text("a".into())]],
        _ => return None,
    };
    if index % 2 == 1 {
        r.reverse();
    }
    Some(r)
}

/// Largest group of equal outcomes wins; failures are singletons; at equal
/// size an executed group beats a failure, then the earliest group wins.
fn oracle(pattern: &[usize]) -> (usize, bool) {
    let mut best: Option<(usize, bool, usize)> = None;
    for (i, &o) in pattern.iter().enumerate() {
        let first = o == 3 || pattern[..i].iter().all(|&p| p != o);
        if !first {
            continue;
        }
        let size = if o == 3 { 1 } else { pattern.iter().filter(|&&p| p == o).count() };
        let executed = o != 3;
        let better = match best {
            None => true,
            Some((s, e, _)) => size > s || (size == s && executed && !e),
        };
        if better {
            best = Some((size, executed, i));
        }
    }
    let (_, executed, i) = best.unwrap();
    (i, !executed)
}

fn sweep(outcomes: usize) -> Result<usize, String> {
    let total = outcomes.pow(5);
    for code in 0..total {
        let pattern: Vec<usize> = (0..5).map(|i| code / outcomes.pow(i) % outcomes).collect();
        let results: Vec<Option<Vec<Row>>> = pattern.iter().enumerate().map(|(i, &o)| rows(o, i)).collect();
        let v = vote(&results);
        let (want, all_failed) = oracle(&pattern);
        if v.chosen != want || v.all_failed != all_failed {
            return Err(format!("pattern {pattern:?}: vote chose {} (all_failed {}), oracle {want}", v.chosen, v.all_failed));
        }
    }
    Ok(total)
}

pub fn check() -> Result<String, String> {
    let three = sweep(3)?;
    let with_failures = sweep(4)?;
    Ok(format!("{three} patterns agree; {with_failures} with failures agree"))
}
