//! Spider-layout dataset loading: schema catalogs, instance files and
//! cross-domain candidate pools.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("schema catalog {0} not found")]
    MissingCatalog(String),
    #[error("database {db_id}: {reason}")]
    InvalidSchema { db_id: String, reason: String },
    #[error("instance file {0} not found")]
    MissingInstances(String),
    #[error("unknown database {0}")]
    UnknownDatabase(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub sql_type: String,
    #[serde(default)]
    pub is_primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// `from` references `to`, i.e. `from` is the referencing column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub db_id: String,
    pub tables: Vec<Table>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default)]
    pub db_file_path: PathBuf,
}

impl Schema {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Checks name uniqueness and that every foreign-key endpoint exists.
    pub fn validate(&self) -> std::result::Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidSchema {
            db_id: self.db_id.clone(),
            reason,
        };
        let mut seen = HashSet::new();
        for table in &self.tables {
            if !seen.insert(table.name.to_lowercase()) {
                return Err(invalid(format!("duplicate table {}", table.name)));
            }
            let mut cols = HashSet::new();
            for col in &table.columns {
                if !cols.insert(col.name.to_lowercase()) {
                    return Err(invalid(format!(
                        "duplicate column {}.{}",
                        table.name, col.name
                    )));
                }
            }
        }
        for fk in &self.foreign_keys {
            for end in [&fk.from, &fk.to] {
                let ok = self
                    .table(&end.table)
                    .and_then(|t| t.column(&end.column))
                    .is_some();
                if !ok {
                    return Err(invalid(format!("foreign key endpoint {end} does not exist")));
                }
            }
        }
        Ok(())
    }

    /// Foreign keys declared on `table` (as the referencing side).
    pub fn foreign_keys_from<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ForeignKey> {
        self.foreign_keys.iter().filter(move |fk| fk.from.table == table)
    }
}

/// Lookup of schemas by `db_id`.
#[derive(Debug, Clone, Default)]
pub struct SchemaSet {
    by_id: BTreeMap<String, Schema>,
}

impl SchemaSet {
    pub fn new(schemas: impl IntoIterator<Item = Schema>) -> Self {
        Self {
            by_id: schemas.into_iter().map(|s| (s.db_id.clone(), s)).collect(),
        }
    }

    pub fn get(&self, db_id: &str) -> Option<&Schema> {
        self.by_id.get(db_id)
    }

    pub fn require(&self, db_id: &str) -> std::result::Result<&Schema, CorpusError> {
        self.get(db_id)
            .ok_or_else(|| CorpusError::UnknownDatabase(db_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Schema> {
        self.by_id.values()
    }
}

/// Stable identity of an instance: `<split>/<record index>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub String);

impl InstanceId {
    pub fn new(split: &str, index: usize) -> Self {
        InstanceId(format!("{split}/{index}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub question: String,
    pub gold_sql: String,
    pub db_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    pub instances: Vec<Instance>,
    pub source_split: String,
}

impl CandidatePool {
    pub fn new(instances: Vec<Instance>, source_split: impl Into<String>) -> Self {
        Self {
            instances,
            source_split: source_split.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Drops every instance on `target_db`, preserving order.
pub fn cross_domain_pool(pool: &CandidatePool, target_db: &str) -> CandidatePool {
    CandidatePool {
        instances: pool
            .instances
            .iter()
            .filter(|i| i.db_id != target_db)
            .cloned()
            .collect(),
        source_split: pool.source_split.clone(),
    }
}

#[derive(Debug, Deserialize)]
struct CatalogEntry {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<PrimaryKey>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

/// Spider stores single-column keys as ints; some derived catalogs use lists.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PrimaryKey {
    Single(usize),
    Composite(Vec<usize>),
}

fn schema_from_entry(entry: CatalogEntry, db_root: &Path) -> std::result::Result<Schema, CorpusError> {
    let db_id = entry.db_id;
    let invalid = |reason: String| CorpusError::InvalidSchema {
        db_id: db_id.clone(),
        reason,
    };
    if entry.column_types.len() != entry.column_names_original.len() {
        return Err(invalid(format!(
            "{} column types for {} columns",
            entry.column_types.len(),
            entry.column_names_original.len()
        )));
    }
    let pk: HashSet<usize> = entry
        .primary_keys
        .iter()
        .flat_map(|p| match p {
            PrimaryKey::Single(i) => vec![*i],
            PrimaryKey::Composite(v) => v.clone(),
        })
        .collect();

    let mut tables: Vec<Table> = entry
        .table_names_original
        .iter()
        .map(|name| Table {
            name: name.clone(),
            columns: Vec::new(),
        })
        .collect();
    // Column index -> (table, column) name; index 0 is the `*` pseudo-column.
    let mut resolved: Vec<Option<ColumnRef>> = Vec::with_capacity(entry.column_names_original.len());
    for (idx, (table_idx, name)) in entry.column_names_original.iter().enumerate() {
        if *table_idx < 0 {
            resolved.push(None);
            continue;
        }
        let table = tables
            .get_mut(*table_idx as usize)
            .ok_or_else(|| invalid(format!("column {name} references missing table {table_idx}")))?;
        table.columns.push(Column {
            name: name.clone(),
            sql_type: entry.column_types[idx].clone(),
            is_primary_key: pk.contains(&idx),
        });
        resolved.push(Some(ColumnRef::new(table.name.clone(), name.clone())));
    }
    let lookup = |idx: usize| -> std::result::Result<ColumnRef, CorpusError> {
        resolved
            .get(idx)
            .cloned()
            .flatten()
            .ok_or_else(|| invalid(format!("foreign key column index {idx} out of range")))
    };
    let mut foreign_keys = Vec::with_capacity(entry.foreign_keys.len());
    for (from, to) in entry.foreign_keys {
        foreign_keys.push(ForeignKey {
            from: lookup(from)?,
            to: lookup(to)?,
        });
    }
    let schema = Schema {
        db_file_path: db_root.join(&db_id).join(format!("{db_id}.sqlite")),
        db_id: db_id.clone(),
        tables,
        foreign_keys,
    };
    schema.validate()?;
    Ok(schema)
}

/// Loads a Spider `tables.json` catalog. Foreign keys are resolved from
/// column indices to names.
pub fn load_schemas(catalog_path: &Path, db_root: &Path) -> Result<Vec<Schema>> {
    if !catalog_path.exists() {
        return Err(CorpusError::MissingCatalog(catalog_path.display().to_string()).into());
    }
    let text = std::fs::read_to_string(catalog_path).map_err(|e| Error::io(catalog_path, e))?;
    let entries: Vec<CatalogEntry> =
        serde_json::from_str(&text).map_err(|e| Error::json(catalog_path, e))?;
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        out.push(schema_from_entry(entry, db_root)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct InstanceLoad {
    pub instances: Vec<Instance>,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Debug, Deserialize)]
struct RawInstance {
    question: String,
    query: String,
    db_id: String,
}

/// Split label used in instance ids: the file stem.
pub fn split_label(file: &Path) -> String {
    file.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instances".to_string())
}

/// Loads a Spider instance file. Records with an unknown `db_id`, an empty
/// question, or a malformed shape are skipped and reported, not fatal.
pub fn load_instances(file: &Path, schemas: &SchemaSet) -> Result<InstanceLoad> {
    if !file.exists() {
        return Err(CorpusError::MissingInstances(file.display().to_string()).into());
    }
    let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let records: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::json(file, e))?;
    let split = split_label(file);
    let mut load = InstanceLoad::default();
    for (index, value) in records.into_iter().enumerate() {
        let raw: RawInstance = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                load.skipped.push(SkippedRecord {
                    index,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        if raw.question.trim().is_empty() {
            load.skipped.push(SkippedRecord {
                index,
                reason: "empty question".into(),
            });
            continue;
        }
        if schemas.get(&raw.db_id).is_none() {
            load.skipped.push(SkippedRecord {
                index,
                reason: format!("unknown db_id {}", raw.db_id),
            });
            continue;
        }
        load.instances.push(Instance {
            id: InstanceId::new(&split, index),
            question: raw.question,
            gold_sql: raw.query,
            db_id: raw.db_id,
        });
    }
    if !load.skipped.is_empty() {
        log::warn!("{}: skipped {} record(s)", file.display(), load.skipped.len());
    }
    Ok(load)
}
