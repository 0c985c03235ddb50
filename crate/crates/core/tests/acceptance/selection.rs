//! Criteria 4 and 5: DAIL selection trace, metamorphic identities and the
//! threshold guarantee.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlprompt_core::embedding::EmbeddingVector;
use sqlprompt_core::selection::{select, PreparedCandidate, PreparedPool};
use sqlprompt_core::sqlkit::extract_skeleton;
use sqlprompt_core::{SelectionConfig, Strategy};

use crate::common::instance;

const TEMPLATES: &[&str] = &[
    "SELECT count(*) FROM farm",
    "SELECT name FROM singer WHERE age > 30 ORDER BY age DESC",
    "SELECT a, avg(b) FROM t GROUP BY a",
    "SELECT x FROM y WHERE z IN (SELECT w FROM v)",
    "SELECT DISTINCT c FROM t WHERE d = 'v' AND e < 3",
    "SELECT T1.a FROM t1 AS T1 JOIN t2 AS T2 ON T1.id = T2.id WHERE T2.b = 1",
    // Skeleton Jaccard 15/16 with the next one, 14/16 with the one after.
    "SELECT T1.a, T2.d FROM t1 AS T1 JOIN t2 AS T2 ON T1.id = T2.id WHERE T2.b > 1 AND T2.c = 2 ORDER BY T2.d DESC LIMIT 3",
    "SELECT DISTINCT T1.a, T2.d FROM t1 AS T1 JOIN t2 AS T2 ON T1.id = T2.id WHERE T2.b > 1 AND T2.c = 2 ORDER BY T2.d DESC LIMIT 3",
    "SELECT T1.a, T2.d FROM t1 AS T1 JOIN t2 AS T2 ON T1.id = T2.id WHERE T2.b > 1 AND T2.c = 2 ORDER BY T2.d ASC LIMIT 3",
    "SELECT a FROM t ORDER BY b LIMIT 1",
    "SELECT a, count(*) FROM t GROUP BY a HAVING count(*) > 2",
    "SELECT max(a), min(a) FROM t",
    "SELECT a FROM t WHERE b LIKE '%x%' UNION SELECT a FROM u",
];

fn candidate(i: usize, db: &str, sql: &str, emb: Vec<f64>) -> PreparedCandidate {
    let inst = instance("train", i, db, &format!("question {i}"), sql);
    let masked = inst.question.clone();
    PreparedCandidate::from_parts(
        inst,
        masked,
        None,
        Some(EmbeddingVector {
            values: emb,
            model_id: "test".into(),
        }),
    )
}

fn unit(deg: f64) -> Vec<f64> {
    let r = deg.to_radians();
    vec![r.cos(), r.sin()]
}

fn ids(pool: &PreparedPool, cfg: &SelectionConfig, target: &PreparedCandidate, reference: Option<&str>) -> Result<Vec<String>, String> {
    let r = select(cfg, pool, target, reference).map_err(|e| e.to_string())?;
    Ok(r.chosen.iter().map(|c| c.id.as_str().to_string()).collect())
}

fn cfg(strategy: Strategy, k: usize, tau: f64) -> SelectionConfig {
    let mut c = SelectionConfig::new(strategy, k);
    c.tau = tau;
    c
}

/// Six candidates at known angles from the target; three share the
/// preliminary query's skeleton.
fn micro_pool() -> (PreparedPool, PreparedCandidate) {
    let layout = [
        (50.0, "SELECT count(*) FROM singer"),
        (10.0, "SELECT name FROM singer WHERE age > 30 ORDER BY age DESC"),
        (30.0, "SELECT count(*) FROM authors"),
        (70.0, "SELECT count(*) FROM stadium"),
        (20.0, "SELECT a, avg(b) FROM t GROUP BY a"),
        (40.0, "SELECT x FROM y WHERE z IN (SELECT w FROM v)"),
    ];
    let candidates = layout
        .iter()
        .enumerate()
        .map(|(i, (deg, sql))| candidate(i, &format!("db{i}"), sql, unit(*deg)))
        .collect();
    let pool = PreparedPool {
        candidates,
        source_split: "train".into(),
    };
    let target = candidate(100, "farm", "SELECT count(*) FROM farm", unit(0.0));
    (pool, target)
}

fn expect(label: &str, got: Vec<String>, want: &[usize]) -> Result<(), String> {
    let want: Vec<String> = want.iter().map(|i| format!("train/{i}")).collect();
    if got == want {
        Ok(())
    } else {
        Err(format!("{label}: got {got:?}, traced {want:?}"))
    }
}

fn random_pool(rng: &mut ChaCha8Rng, dim: usize) -> (PreparedPool, PreparedCandidate) {
    let n = rng.random_range(3..14);
    let emb = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let candidates = (0..n)
        .map(|i| {
            let sql = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
            let e = emb(rng);
            candidate(i, &format!("db{}", rng.random_range(0..4)), sql, e)
        })
        .collect();
    let target_sql = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
    let e = emb(rng);
    let target = candidate(999, "db_target", target_sql, e);
    (
        PreparedPool {
            candidates,
            source_split: "train".into(),
        },
        target,
    )
}

pub fn check_trace() -> Result<String, String> {
    let (pool, target) = micro_pool();
    let prelim = Some("SELECT count(*) FROM farm");
    // Cosine order: 1, 4, 2, 5, 0, 3. Skeleton matches: 0, 2, 3.
    expect("k=3 tau=0.9", ids(&pool, &cfg(Strategy::Dail, 3, 0.9), &target, prelim)?, &[2, 0, 3])?;
    expect("k=4 tau=0.9", ids(&pool, &cfg(Strategy::Dail, 4, 0.9), &target, prelim)?, &[2, 0, 3, 1])?;
    expect("k=2 tau=0.9", ids(&pool, &cfg(Strategy::Dail, 2, 0.9), &target, prelim)?, &[2, 0])?;
    expect("k=3 tau=0", ids(&pool, &cfg(Strategy::Dail, 3, 0.0), &target, prelim)?, &[1, 4, 2])?;
    expect(
        "tau=1 unmatched",
        ids(&pool, &cfg(Strategy::Dail, 3, 1.0), &target, Some("SELECT a FROM t WHERE b LIKE 'x'"))?,
        &[1, 4, 2],
    )?;
    expect("upper limit", ids(&pool, &cfg(Strategy::UpperLimit, 3, 0.9), &target, None)?, &[2, 0, 3])?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let (pool, target) = random_pool(&mut rng, 6);
        let k = rng.random_range(0..6);
        let prelim = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
        let mqs = ids(&pool, &cfg(Strategy::MaskedQuestionSimilarity, k, 0.9), &target, None)?;
        let dail0 = ids(&pool, &cfg(Strategy::Dail, k, 0.0), &target, Some(prelim))?;
        if mqs != dail0 {
            return Err(format!("case {case}: tau=0 gives {dail0:?}, MQS gives {mqs:?}"));
        }
        let gold = target.instance.gold_sql.clone();
        let dail_gold = ids(&pool, &cfg(Strategy::Dail, k, 0.9), &target, Some(&gold))?;
        let upper = ids(&pool, &cfg(Strategy::UpperLimit, k, 0.9), &target, None)?;
        if dail_gold != upper {
            return Err(format!("case {case}: gold-referenced DAIL {dail_gold:?} vs upper limit {upper:?}"));
        }
    }
    Ok("6-candidate trace exact; 200 pools satisfy both identities".into())
}

fn token_set(sql: &str) -> BTreeSet<String> {
    extract_skeleton(sql).text.split_whitespace().map(str::to_string).collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

pub fn check_threshold() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_seen = f64::INFINITY;
    for case in 0..500 {
        let (mut pool, target) = random_pool(&mut rng, 8);
        let k = rng.random_range(1..6);
        let prelim = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
        let pre_tokens = token_set(prelim);
        // Guarantee at least k candidates clear the threshold, drawing from
        // every template that does (not only exact copies).
        let near: Vec<&str> = TEMPLATES
            .iter()
            .copied()
            .filter(|t| jaccard(&token_set(t), &pre_tokens) >= 0.9)
            .collect();
        let base = pool.candidates.len();
        for j in 0..k {
            let emb = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sql = near[rng.random_range(0..near.len())];
            pool.candidates.push(candidate(base + j, "db_extra", sql, emb));
        }
        let clearing = pool
            .candidates
            .iter()
            .filter(|c| jaccard(&token_set(&c.instance.gold_sql), &pre_tokens) >= 0.9)
            .count();
        if clearing < k {
            return Err(format!("case {case}: generator produced only {clearing} clearing candidates"));
        }
        let r = select(&cfg(Strategy::Dail, k, 0.9), &pool, &target, Some(prelim)).map_err(|e| e.to_string())?;
        if r.chosen.len() != k {
            return Err(format!("case {case}: chose {} of {k}", r.chosen.len()));
        }
        for (c, stats) in r.chosen.iter().zip(&r.per_example) {
            let j = jaccard(&token_set(&c.gold_sql), &pre_tokens);
            if j < 0.9 || stats.query_jaccard < 0.9 {
                return Err(format!("case {case}: chose {} with jaccard {j}", c.id));
            }
            min_seen = min_seen.min(j);
        }
    }
    Ok(format!("500 pools, minimum selected Jaccard {min_seen:.2}"))
}
