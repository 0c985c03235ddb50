//! Criterion 3: EM/EX scoring agrees with an independent oracle on 50
//! hand-built (gold, prediction) pairs.
//!
//! EM expectations are labelled by hand from clause-set comparison with
//! values stripped. EX expectations come from executing both queries here
//! with plain rusqlite and comparing rows by brute force.

use std::path::Path;

use rusqlite::types::Value;
use sqlprompt_core::eval::{evaluate_run, EvalOptions, Prediction};

use crate::common::{instance, mini};

/// (database, gold, prediction, EM by hand)
const PAIRS: &[(&str, &str, &str, bool)] = &[
    // concert_singer
    ("concert_singer", "SELECT count(*) FROM singer", "SELECT count(*) FROM singer", true),
    ("concert_singer", "SELECT Name, Country FROM singer WHERE Age > 40", "SELECT Country, Name FROM singer WHERE Age > 40", true),
    ("concert_singer", "SELECT Name FROM singer WHERE Age > 40", "SELECT Name FROM singer WHERE Age > 30", true),
    ("concert_singer", "SELECT Name FROM singer WHERE Age > 40", "SELECT Name FROM singer WHERE Age >= 41", false),
    ("concert_singer", "SELECT Name FROM singer ORDER BY Age DESC", "SELECT Name FROM singer ORDER BY Age ASC", false),
    ("concert_singer", "SELECT Name FROM singer ORDER BY Age DESC LIMIT 1", "SELECT Name FROM singer ORDER BY Age ASC LIMIT 1", false),
    ("concert_singer", "SELECT Name FROM singer ORDER BY Age DESC LIMIT 1", "SELECT Name FROM singer WHERE Age = (SELECT max(Age) FROM singer)", false),
    ("concert_singer", "SELECT Country, count(*) FROM singer GROUP BY Country", "SELECT Country, count(Singer_ID) FROM singer GROUP BY Country", false),
    (
        "concert_singer",
        "SELECT avg(Age), min(Age), max(Age) FROM singer WHERE Country = 'France'",
        "SELECT max(Age), min(Age), avg(Age) FROM singer WHERE Country = 'France'",
        true,
    ),
    (
        "concert_singer",
        "SELECT avg(Age), min(Age), max(Age) FROM singer WHERE Country = 'France'",
        "SELECT avg(Age), min(Age), max(Age) FROM singer WHERE Country = 'Netherlands'",
        true,
    ),
    (
        "concert_singer",
        "SELECT T2.Name FROM singer_in_concert AS T1 JOIN singer AS T2 ON T1.Singer_ID = T2.Singer_ID WHERE T1.concert_ID = 1",
        "SELECT s.Name FROM singer s JOIN singer_in_concert c ON s.Singer_ID = c.Singer_ID WHERE c.concert_ID = 1",
        true,
    ),
    ("concert_singer", "SELECT DISTINCT Country FROM singer WHERE Age > 20", "SELECT Country FROM singer WHERE Age > 20", false),
    ("concert_singer", "SELECT Name FROM stadium WHERE Capacity > 5000", "SELECT Name FROM stadium WHERE Capacity > 5000 AND Average > 0", false),
    ("concert_singer", "SELECT Name FROM stadium WHERE Capacity > 5000", "SELECT Location FROM stadium WHERE Capacity > 5000", false),
    (
        "concert_singer",
        "SELECT count(*) FROM concert WHERE Year = '2014' OR Year = '2015'",
        "SELECT count(*) FROM concert WHERE Year = '2015' OR Year = '2014'",
        true,
    ),
    ("concert_singer", "SELECT count(*) FROM concert WHERE Year = '2014'", "SELECT count(*) FROM concert WHERE Year = '2015'", true),
    (
        "concert_singer",
        "SELECT Stadium_ID, count(*) FROM concert GROUP BY Stadium_ID HAVING count(*) > 1",
        "SELECT Stadium_ID, count(*) FROM concert GROUP BY Stadium_ID HAVING count(*) > 0",
        true,
    ),
    (
        "concert_singer",
        "SELECT Name FROM singer WHERE Singer_ID NOT IN (SELECT Singer_ID FROM singer_in_concert)",
        "SELECT Name FROM singer EXCEPT SELECT T2.Name FROM singer_in_concert AS T1 JOIN singer AS T2 ON T1.Singer_ID = T2.Singer_ID",
        false,
    ),
    (
        "concert_singer",
        "SELECT concert_Name FROM concert WHERE Stadium_ID IN (SELECT Stadium_ID FROM stadium WHERE Capacity > 10000)",
        "SELECT T1.concert_Name FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID WHERE T2.Capacity > 10000",
        false,
    ),
    (
        "concert_singer",
        "SELECT Name FROM singer WHERE Country = 'France' AND Age > 30",
        "SELECT Name FROM singer WHERE Age > 30 AND Country = 'France'",
        true,
    ),
    (
        "concert_singer",
        "SELECT Name FROM singer WHERE Country = 'France' AND Age > 30",
        "SELECT Name FROM singer WHERE Country = 'France' OR Age > 30",
        false,
    ),
    ("concert_singer", "SELECT max(Capacity), avg(Capacity) FROM stadium", "SELECT max(Capacity), avg(Average) FROM stadium", false),
    ("concert_singer", "SELECT Name FROM singer WHERE Age > 40", "SELECT Name FROM singer WHERE", false),
    ("concert_singer", "SELECT Name FROM singer", "SELECT Nme FROM singer", false),
    // farm
    ("farm", "SELECT count(*) FROM farm", "SELECT count(*) FROM farm", true),
    ("farm", "SELECT Total_Horses FROM farm ORDER BY Total_Horses ASC", "SELECT Total_Horses FROM farm ORDER BY Total_Horses", true),
    ("farm", "SELECT Total_Horses FROM farm ORDER BY Total_Horses ASC", "SELECT Total_Horses FROM farm", false),
    ("farm", "SELECT Total_Horses FROM farm", "SELECT Total_Horses FROM farm ORDER BY Total_Horses DESC", false),
    ("farm", "SELECT Official_Name FROM city ORDER BY Population DESC LIMIT 1", "SELECT Official_Name FROM city ORDER BY Population DESC LIMIT 2", true),
    ("farm", "SELECT avg(Area_km_2) FROM city", "SELECT sum(Area_km_2) / count(*) FROM city", false),
    ("farm", "SELECT Status, avg(Population) FROM city GROUP BY Status", "SELECT Status, avg(Population) FROM city GROUP BY Status ORDER BY Status", false),
    ("farm", "SELECT Theme FROM farm_competition WHERE Year > 2004", "SELECT Theme FROM farm_competition WHERE Year >= 2005", false),
    (
        "farm",
        "SELECT T2.Theme FROM city AS T1 JOIN farm_competition AS T2 ON T1.City_ID = T2.Host_city_ID WHERE T1.Population > 1000",
        "SELECT T2.Theme FROM city AS T1 JOIN farm_competition AS T2 ON T1.City_ID = T2.Host_city_ID WHERE T1.Population > 500",
        true,
    ),
    (
        "farm",
        "SELECT Official_Name FROM city WHERE City_ID NOT IN (SELECT Host_city_ID FROM farm_competition)",
        "SELECT Official_Name FROM city WHERE City_ID IN (SELECT Host_city_ID FROM farm_competition)",
        false,
    ),
    (
        "farm",
        "SELECT Status FROM city GROUP BY Status ORDER BY count(*) DESC LIMIT 1",
        "SELECT Status FROM city GROUP BY Status ORDER BY count(*) ASC LIMIT 1",
        false,
    ),
    ("farm", "SELECT Year FROM farm WHERE Cows > 3000", "SELECT Farm_ID FROM farm WHERE Cows > 3000", false),
    ("farm", "SELECT count(DISTINCT Status) FROM city", "SELECT count(Status) FROM city", false),
    (
        "farm",
        "SELECT Official_Name, Status FROM city WHERE Population > 1500 OR Area_km_2 < 3",
        "SELECT Official_Name, Status FROM city WHERE Area_km_2 < 3 OR Population > 1500",
        true,
    ),
    // pets_1
    ("pets_1", "SELECT count(*) FROM Student WHERE Age > 20", "SELECT count(*) FROM Student WHERE Age > 19", true),
    (
        "pets_1",
        "SELECT Fname FROM Student WHERE StuID IN (SELECT T1.StuID FROM Has_Pet AS T1 JOIN Pets AS T2 ON T1.PetID = T2.PetID WHERE T2.PetType = 'cat') INTERSECT SELECT Fname FROM Student WHERE StuID IN (SELECT T1.StuID FROM Has_Pet AS T1 JOIN Pets AS T2 ON T1.PetID = T2.PetID WHERE T2.PetType = 'dog')",
        "SELECT Fname FROM Student WHERE StuID IN (SELECT T1.StuID FROM Has_Pet AS T1 JOIN Pets AS T2 ON T1.PetID = T2.PetID WHERE T2.PetType = 'cat') UNION SELECT Fname FROM Student WHERE StuID IN (SELECT T1.StuID FROM Has_Pet AS T1 JOIN Pets AS T2 ON T1.PetID = T2.PetID WHERE T2.PetType = 'dog')",
        false,
    ),
    ("pets_1", "SELECT PetType, max(weight) FROM Pets GROUP BY PetType", "SELECT PetType, max(weight) FROM Pets GROUP BY PetType", true),
    ("pets_1", "SELECT avg(pet_age) FROM Pets WHERE PetType = 'dog'", "SELECT avg(pet_age) FROM Pets WHERE PetType = 'cat'", true),
    (
        "pets_1",
        "SELECT count(*) FROM Has_Pet AS T1 JOIN Student AS T2 ON T1.StuID = T2.StuID WHERE T2.Age > 18",
        "SELECT count(*) FROM Student AS T2 JOIN Has_Pet AS T1 ON T2.StuID = T1.StuID WHERE T2.Age > 18",
        true,
    ),
    ("pets_1", "SELECT Fname, Age FROM Student WHERE Sex = 'F'", "SELECT Fname, Age FROM Student WHERE Sex = 'M'", true),
    ("pets_1", "SELECT LName FROM Student WHERE Age = (SELECT min(Age) FROM Student)", "SELECT LName FROM Student ORDER BY Age LIMIT 1", false),
    ("pets_1", "SELECT Major, count(*) FROM Student GROUP BY Major", "SELECT Major, count(*) FROM Student GROUP BY Major HAVING count(*) > 0", false),
    // world
    ("world", "SELECT count(*) FROM continents", "SELECT count(*) FROM continents", true),
    (
        "world",
        "SELECT T1.Continent, count(*) FROM continents AS T1 JOIN countries AS T2 ON T1.ContId = T2.Continent GROUP BY T1.ContId",
        "SELECT T1.Continent, count(*) FROM continents AS T1 JOIN countries AS T2 ON T1.ContId = T2.Continent GROUP BY T1.Continent",
        false,
    ),
    (
        "world",
        "SELECT CountryName FROM countries WHERE Continent = 2",
        "SELECT T2.CountryName FROM continents AS T1 JOIN countries AS T2 ON T1.ContId = T2.Continent WHERE T1.Continent = 'europe'",
        false,
    ),
    ("world", "SELECT CountryName FROM countries WHERE Continent = 2", "select countryname from COUNTRIES where continent = 3", true),
];

fn run(db: &Path, sql: &str) -> Option<Vec<Vec<Value>>> {
    let conn = rusqlite::Connection::open(db).ok()?;
    let mut stmt = conn.prepare(sql).ok()?;
    let n = stmt.column_count();
    let rows = stmt
        .query_map([], |r| (0..n).map(|i| r.get::<_, Value>(i)).collect::<Result<Vec<_>, _>>())
        .ok()?;
    rows.collect::<Result<Vec<_>, _>>().ok()
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Real(r) => Some(*r),
        _ => None,
    }
}

fn cell_eq(a: &Value, b: &Value) -> bool {
    match (as_f64(a), as_f64(b)) {
        (Some(x), Some(y)) => x == y || (x - y).abs() <= 1e-6 * x.abs().max(y.abs()),
        _ => a == b,
    }
}

fn row_eq(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cell_eq(x, y))
}

/// ORDER BY outside any parentheses.
fn top_level_order_by(sql: &str) -> bool {
    let mut depth = 0i32;
    let mut flat = String::new();
    for ch in sql.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ if depth == 0 => flat.push(ch.to_ascii_uppercase()),
            _ => {}
        }
    }
    flat.split_whitespace().collect::<Vec<_>>().join(" ").contains("ORDER BY")
}

fn oracle_ex(db: &Path, gold: &str, pred: &str) -> bool {
    let (Some(g), Some(p)) = (run(db, gold), run(db, pred)) else {
        return false;
    };
    if g.len() != p.len() {
        return false;
    }
    if top_level_order_by(gold) {
        return g.iter().zip(&p).all(|(a, b)| row_eq(a, b));
    }
    // Multiset: every gold row claims a distinct equal prediction row.
    let mut used = vec![false; p.len()];
    g.iter().all(|gr| match (0..p.len()).find(|&j| !used[j] && row_eq(gr, &p[j])) {
        Some(j) => {
            used[j] = true;
            true
        }
        None => false,
    })
}

pub fn check() -> Result<String, String> {
    if PAIRS.len() != 50 {
        return Err(format!("corpus has {} pairs", PAIRS.len()));
    }
    let m = mini();
    let instances: Vec<_> = PAIRS
        .iter()
        .enumerate()
        .map(|(i, (db, gold, _, _))| instance("pairs", i, db, "q", gold))
        .collect();
    let preds: Vec<Prediction> = PAIRS
        .iter()
        .zip(&instances)
        .map(|((_, _, pred, _), inst)| Prediction {
            instance_id: inst.id.as_str().to_string(),
            sql: pred.to_string(),
            ..Prediction::default()
        })
        .collect();
    let report = evaluate_run(&preds, &instances, &m.data.schemas, &EvalOptions::default());
    let mut disagreements = Vec::new();
    let (mut em_true, mut ex_true) = (0, 0);
    for (i, ((db, gold, pred, em), row)) in PAIRS.iter().zip(&report.per_instance).enumerate() {
        let db_path = &m.data.schemas.get(db).unwrap().db_file_path;
        let ex = oracle_ex(db_path, gold, pred);
        em_true += usize::from(*em);
        ex_true += usize::from(ex);
        if row.em != *em || row.ex != ex {
            disagreements.push(format!("#{i}: em {} (oracle {em}), ex {} (oracle {ex}): {pred}", row.em, row.ex));
        }
    }
    if !disagreements.is_empty() {
        return Err(disagreements.join("\n"));
    }
    Ok(format!("50/50 agree ({em_true} EM-true, {ex_true} EX-true)"))
}
