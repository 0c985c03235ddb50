//! Synthetic corpora for the benchmarks: Spider-shaped schemas and a
//! candidate pool with realistic question and query shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlprompt_core::corpus::{Column, ColumnRef, ForeignKey, Instance, InstanceId, Table};
use sqlprompt_core::{CandidatePool, Schema, SchemaSet};

const ENTITIES: &[&str] = &["singer", "concert", "stadium", "student", "course", "farm", "pet", "employee", "airport", "book"];
const ATTRS: &[&str] = &["name", "age", "capacity", "city", "country", "year", "salary", "rank", "title", "weight"];

pub const QUERY_SHAPES: &[&str] = &[
    "SELECT count(*) FROM {t}",
    "SELECT {a} FROM {t} WHERE {b} > 30 ORDER BY {b} DESC",
    "SELECT {a}, avg({b}) FROM {t} GROUP BY {a}",
    "SELECT {a} FROM {t} WHERE {b} IN (SELECT {b} FROM {u})",
    "SELECT DISTINCT {a} FROM {t} WHERE {b} = 'x' AND {a} < 3",
    "SELECT T1.{a} FROM {t} AS T1 JOIN {u} AS T2 ON T1.id = T2.{t}_id WHERE T2.{b} = 1",
    "SELECT {a} FROM {t} ORDER BY {b} LIMIT 1",
    "SELECT {a}, count(*) FROM {t} GROUP BY {a} HAVING count(*) > 2",
    "SELECT max({b}), min({b}) FROM {t}",
    "SELECT {a} FROM {t} WHERE {b} LIKE '%x%' UNION SELECT {a} FROM {u}",
];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// A database with two to five tables, every non-first table linked to the
/// first through `<first>_id`.
pub fn schema(db_id: &str, rng: &mut ChaCha8Rng) -> Schema {
    let n = rng.random_range(2..=5);
    let names: Vec<&str> = (0..n).map(|i| ENTITIES[(rng.random_range(0..ENTITIES.len()) + i) % ENTITIES.len()]).collect();
    let mut tables = Vec::new();
    let mut foreign_keys = Vec::new();
    for (i, t) in names.iter().enumerate() {
        let name = format!("{t}{i}");
        let mut columns = vec![Column {
            name: "id".into(),
            sql_type: "number".into(),
            is_primary_key: true,
        }];
        columns.extend(ATTRS.iter().take(rng.random_range(3..ATTRS.len())).map(|a| Column {
            name: (*a).into(),
            sql_type: "text".into(),
            is_primary_key: false,
        }));
        if i > 0 {
            let fk = format!("{}0_id", names[0]);
            columns.push(Column {
                name: fk.clone(),
                sql_type: "number".into(),
                is_primary_key: false,
            });
            foreign_keys.push(ForeignKey {
                from: ColumnRef::new(&name, &fk),
                to: ColumnRef::new(&format!("{}0", names[0]), "id"),
            });
        }
        tables.push(Table { name, columns });
    }
    Schema {
        db_id: db_id.into(),
        tables,
        foreign_keys,
        db_file_path: Default::default(),
    }
}

pub fn query(rng: &mut ChaCha8Rng, schema: &Schema) -> String {
    let t = &schema.tables[rng.random_range(0..schema.tables.len())].name;
    let u = &schema.tables[rng.random_range(0..schema.tables.len())].name;
    pick(rng, QUERY_SHAPES)
        .replace("{t}", t)
        .replace("{u}", u)
        .replace("{a}", pick(rng, ATTRS))
        .replace("{b}", pick(rng, ATTRS))
}

pub fn question(rng: &mut ChaCha8Rng, schema: &Schema) -> String {
    let t = &schema.tables[rng.random_range(0..schema.tables.len())].name;
    let a = pick(rng, ATTRS);
    match rng.random_range(0..4) {
        0 => format!("How many {t} are there?"),
        1 => format!("What is the {a} of each {t} with {} above {}?", pick(rng, ATTRS), rng.random_range(1..100)),
        2 => format!("List the {a} of all {t} ordered by {}.", pick(rng, ATTRS)),
        _ => format!("Which {t} has the highest {a}?"),
    }
}

/// `dbs` schemas and a pool of `n` instances spread over them.
pub fn corpus(dbs: usize, n: usize, seed: u64) -> (SchemaSet, CandidatePool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schemas: Vec<Schema> = (0..dbs).map(|i| schema(&format!("db{i}"), &mut rng)).collect();
    let instances = (0..n)
        .map(|i| {
            let s = &schemas[rng.random_range(0..schemas.len())];
            Instance {
                id: InstanceId::new("train", i),
                question: question(&mut rng, s),
                gold_sql: query(&mut rng, s),
                db_id: s.db_id.clone(),
            }
        })
        .collect();
    (SchemaSet::new(schemas), CandidatePool::new(instances, "train"))
}
