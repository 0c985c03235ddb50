//! Read-only SQL execution with a wall-clock limit, and result comparison.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("cannot open database {path}: {reason}")]
    Open { path: String, reason: String },
    #[error("query exceeded the {0:?} limit")]
    Timeout(Duration),
    #[error("query failed: {0}")]
    Sql(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn numeric(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Integer(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }
}

pub type Row = Vec<Cell>;

/// Equality with relative tolerance on numbers; integers and reals compare
/// by value.
pub fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a.numeric(), b.numeric()) {
        (Some(x), Some(y)) => {
            x == y || (x - y).abs() <= RELATIVE_TOLERANCE * x.abs().max(y.abs())
        }
        _ => match (a, b) {
            (Cell::Null, Cell::Null) => true,
            (Cell::Text(x), Cell::Text(y)) => x == y,
            (Cell::Blob(x), Cell::Blob(y)) => x == y,
            _ => false,
        },
    }
}

fn cell_order(a: &Cell, b: &Cell) -> Ordering {
    a.rank().cmp(&b.rank()).then_with(|| match (a, b) {
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        (Cell::Blob(x), Cell::Blob(y)) => x.cmp(y),
        _ => match (a.numeric(), b.numeric()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn row_order(a: &Row, b: &Row) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| cell_order(x, y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn rows_equal(a: &Row, b: &Row) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

/// Compares two results as lists (`ordered`) or as multisets of rows.
pub fn results_match(gold: &[Row], pred: &[Row], ordered: bool) -> bool {
    if gold.len() != pred.len() {
        return false;
    }
    if ordered {
        return gold.iter().zip(pred).all(|(g, p)| rows_equal(g, p));
    }
    let mut g: Vec<&Row> = gold.iter().collect();
    let mut p: Vec<&Row> = pred.iter().collect();
    g.sort_by(|a, b| row_order(a, b));
    p.sort_by(|a, b| row_order(a, b));
    g.iter().zip(&p).all(|(a, b)| rows_equal(a, b))
}

/// Runs one statement on a fresh read-only connection.
pub fn execute_query(db: &Path, sql: &str, timeout: Duration) -> Result<Vec<Row>, ExecError> {
    let conn = Connection::open_with_flags(db, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(|e| ExecError::Open {
            path: db.display().to_string(),
            reason: e.to_string(),
        })?;
    conn.pragma_update(None, "query_only", true)
        .map_err(|e| ExecError::Sql(e.to_string()))?;

    let started = Instant::now();
    let fired = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&fired);
    conn.progress_handler(
        1000,
        Some(move || {
            let over = started.elapsed() > timeout;
            if over {
                flag.store(true, AtomicOrdering::Relaxed);
            }
            over
        }),
    );

    let map_err = |e: rusqlite::Error| {
        if fired.load(AtomicOrdering::Relaxed) {
            ExecError::Timeout(timeout)
        } else {
            ExecError::Sql(e.to_string())
        }
    };
    let mut stmt = conn.prepare(sql).map_err(map_err)?;
    let ncols = stmt.column_count();
    let mut rows = stmt.query([]).map_err(map_err)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(map_err)? {
        let mut cells = Vec::with_capacity(ncols);
        for i in 0..ncols {
            let v = row.get_ref(i).map_err(map_err)?;
            cells.push(match v {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(i) => Cell::Integer(i),
                ValueRef::Real(r) => Cell::Real(r),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
            });
        }
        out.push(cells);
    }
    Ok(out)
}
