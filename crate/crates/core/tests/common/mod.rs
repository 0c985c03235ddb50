#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sqlprompt_core::corpus::{Column, ColumnRef, ForeignKey, Instance, InstanceId, Table};
use sqlprompt_core::embedding::HashProvider;
use sqlprompt_core::llm::{Backend, OracleBackend};
use sqlprompt_core::pipeline::{load_dataset, Dataset, DatasetConfig, RunConfig, RunContext};
use sqlprompt_core::promptgen::{ApproxCounter, TokenCounter};
use sqlprompt_core::selection::PreparedPool;
use sqlprompt_core::{Schema, Strategy};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden(name: &str) -> String {
    fs::read_to_string(fixtures().join("golden").join(name)).unwrap()
}

fn col(name: &str, ty: &str, pk: bool) -> Column {
    Column {
        name: name.into(),
        sql_type: ty.into(),
        is_primary_key: pk,
    }
}

/// continents(ContId, Continent) / countries(CountryId, CountryName,
/// Continent), linked in both directions.
pub fn continents_schema() -> Schema {
    Schema {
        db_id: "world".into(),
        tables: vec![
            Table {
                name: "continents".into(),
                columns: vec![col("ContId", "number", true), col("Continent", "text", false)],
            },
            Table {
                name: "countries".into(),
                columns: vec![
                    col("CountryId", "number", true),
                    col("CountryName", "text", false),
                    col("Continent", "number", false),
                ],
            },
        ],
        foreign_keys: vec![
            ForeignKey {
                from: ColumnRef::new("continents", "ContId"),
                to: ColumnRef::new("countries", "Continent"),
            },
            ForeignKey {
                from: ColumnRef::new("countries", "Continent"),
                to: ColumnRef::new("continents", "ContId"),
            },
        ],
        db_file_path: PathBuf::new(),
    }
}

pub fn instance(split: &str, idx: usize, db: &str, question: &str, sql: &str) -> Instance {
    Instance {
        id: InstanceId::new(split, idx),
        question: question.into(),
        gold_sql: sql.into(),
        db_id: db.into(),
    }
}

/// The mini corpus copied into a temp dir with its SQLite files built.
pub struct Mini {
    pub dir: tempfile::TempDir,
    pub config: DatasetConfig,
    pub data: Dataset,
}

pub fn mini() -> Mini {
    let src = fixtures().join("mini");
    let dir = tempfile::tempdir().unwrap();
    for f in ["tables.json", "dev.json", "train.json"] {
        fs::copy(src.join(f), dir.path().join(f)).unwrap();
    }
    for entry in fs::read_dir(src.join("database")).unwrap() {
        let entry = entry.unwrap();
        let db = entry.file_name().to_string_lossy().into_owned();
        let out = dir.path().join("database").join(&db);
        fs::create_dir_all(&out).unwrap();
        let sql = fs::read_to_string(entry.path().join("schema.sql")).unwrap();
        let conn = rusqlite::Connection::open(out.join(format!("{db}.sqlite"))).unwrap();
        conn.execute_batch(&format!("PRAGMA foreign_keys = OFF;\n{sql}")).unwrap();
    }
    let config = DatasetConfig {
        tables: dir.path().join("tables.json"),
        db_root: dir.path().join("database"),
        instances: dir.path().join("dev.json"),
        pool: dir.path().join("train.json"),
    };
    let data = load_dataset(&config).unwrap();
    Mini { dir, config, data }
}

impl Mini {
    /// Canonical config pointing at this corpus.
    pub fn config(&self) -> RunConfig {
        RunConfig::dail_sql(self.config.clone())
    }

    pub fn oracle(&self) -> Arc<dyn Backend> {
        let gold = self
            .data
            .instances
            .iter()
            .chain(&self.data.pool.instances)
            .map(|i| (i.id.as_str().to_string(), i.gold_sql.clone()));
        Arc::new(OracleBackend::new(gold, Arc::new(ApproxCounter)))
    }

    /// Offline context: hash embeddings, approximate token counts.
    pub fn context(&self, backend: Arc<dyn Backend>, strategy: Strategy) -> RunContext {
        let embedder = Arc::new(HashProvider);
        let counter: Arc<dyn TokenCounter> = Arc::new(ApproxCounter);
        let pool = PreparedPool::prepare(&self.data.pool, &self.data.schemas, embedder.as_ref(), strategy).unwrap();
        RunContext {
            schemas: self.data.schemas.clone(),
            pool,
            backend,
            embedder,
            counter,
            preliminary: Default::default(),
        }
    }
}
