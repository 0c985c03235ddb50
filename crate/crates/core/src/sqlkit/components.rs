//! Clause-level decomposition of a query for exact-set-match comparison.
//!
//! Every clause becomes a set of canonical strings. Literal values are
//! replaced by `_`, identifiers are lowercased, and table aliases are
//! resolved to table names, so two queries compare equal when they use the
//! same clause components regardless of item order, identifier case,
//! alias naming, or constants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::corpus::Schema;

use super::ast::*;
use super::parser::parse;
use super::SqlError;

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct ComponentSet {
    pub select_items: BTreeSet<String>,
    pub from_tables: BTreeSet<String>,
    pub where_conditions: BTreeSet<String>,
    pub group_by_items: BTreeSet<String>,
    pub having_conditions: BTreeSet<String>,
    pub order_by_items: BTreeSet<String>,
    pub aggregates: BTreeSet<String>,
    /// `distinct`, `limit`, `where`, `group`, `having`, `order`, `and`,
    /// `or`, `not`, `in`, `like`, set operators and `nested`.
    pub keywords: BTreeSet<String>,
    pub set_operation: Option<(String, Box<ComponentSet>)>,
}

impl ComponentSet {
    /// A single-line deterministic rendering, used to embed nested queries
    /// inside the items of an enclosing query.
    pub fn canonical_key(&self) -> String {
        let mut out = String::new();
        let mut section = |name: &str, set: &BTreeSet<String>| {
            if !set.is_empty() {
                let _ = write!(out, "{name}[{}]", set.iter().cloned().collect::<Vec<_>>().join("; "));
            }
        };
        section("select", &self.select_items);
        section("from", &self.from_tables);
        section("where", &self.where_conditions);
        section("group", &self.group_by_items);
        section("having", &self.having_conditions);
        section("order", &self.order_by_items);
        section("agg", &self.aggregates);
        section("kw", &self.keywords);
        if let Some((op, rest)) = &self.set_operation {
            let _ = write!(out, " {op} {{{}}}", rest.canonical_key());
        }
        out
    }

    /// Names of the clauses that differ, for diagnostics.
    pub fn differing_clauses(&self, other: &ComponentSet) -> Vec<&'static str> {
        let mut out = Vec::new();
        let pairs: [(&'static str, &BTreeSet<String>, &BTreeSet<String>); 8] = [
            ("select", &self.select_items, &other.select_items),
            ("from", &self.from_tables, &other.from_tables),
            ("where", &self.where_conditions, &other.where_conditions),
            ("group_by", &self.group_by_items, &other.group_by_items),
            ("having", &self.having_conditions, &other.having_conditions),
            ("order_by", &self.order_by_items, &other.order_by_items),
            ("aggregates", &self.aggregates, &other.aggregates),
            ("keywords", &self.keywords, &other.keywords),
        ];
        for (name, a, b) in pairs {
            if a != b {
                out.push(name);
            }
        }
        if self.set_operation != other.set_operation {
            out.push("set_operation");
        }
        out
    }
}

/// Decomposes `sql` into clause component sets.
pub fn decompose_components(sql: &str) -> Result<ComponentSet, SqlError> {
    decompose_with_schema(sql, None)
}

/// Like [`decompose_components`], additionally qualifying unqualified
/// columns with the unique FROM table that owns them in `schema`.
pub fn decompose_with_schema(sql: &str, schema: Option<&Schema>) -> Result<ComponentSet, SqlError> {
    let parsed = parse(sql)?;
    let cx = Context { schema };
    Ok(cx.query(&parsed.query, &Scope::root()))
}

struct Context<'s> {
    schema: Option<&'s Schema>,
}

/// Name resolution for one SELECT core.
#[derive(Clone, Default)]
struct Scope {
    /// alias or table name (lowercase) -> table name (lowercase)
    tables: BTreeMap<String, String>,
    /// tables named in FROM, in order
    from_tables: Vec<String>,
    has_derived: bool,
    /// SELECT output aliases -> canonical expression, visible in ORDER BY / HAVING
    outputs: BTreeMap<String, String>,
    /// enclosing scope for correlated references
    parent: Option<Box<Scope>>,
}

impl Scope {
    fn root() -> Self {
        Scope::default()
    }

    fn resolve_table(&self, name: &str) -> String {
        let lower = name.to_lowercase();
        if let Some(t) = self.tables.get(&lower) {
            return t.clone();
        }
        match &self.parent {
            Some(p) => p.resolve_table(name),
            None => lower,
        }
    }
}

/// Facts gathered while canonicalizing expressions.
#[derive(Default)]
struct Facts {
    aggregates: BTreeSet<String>,
    keywords: BTreeSet<String>,
}

impl<'s> Context<'s> {
    fn query(&self, q: &Query, outer: &Scope) -> ComponentSet {
        let mut set = self.select(&q.select, q, outer);
        for (name, cte) in &q.ctes {
            set.keywords.insert("nested".into());
            set.from_tables.remove(&name.to_lowercase());
            set.from_tables
                .insert(format!("({})", self.query(cte, outer).canonical_key()));
        }
        if let Some((op, rest)) = &q.compound {
            set.keywords.insert(op.keyword().into());
            set.set_operation = Some((op.keyword().into(), Box::new(self.query(rest, outer))));
        }
        set
    }

    fn scope_for(&self, select: &Select, outer: &Scope) -> Scope {
        let mut scope = Scope {
            parent: Some(Box::new(outer.clone())),
            ..Scope::default()
        };
        if let Some(from) = &select.from {
            for factor in from.factors() {
                match factor {
                    TableFactor::Table { name, alias } => {
                        let table = name.to_lowercase();
                        scope.tables.insert(table.clone(), table.clone());
                        if let Some(a) = alias {
                            scope.tables.insert(a.to_lowercase(), table.clone());
                        }
                        scope.from_tables.push(table);
                    }
                    TableFactor::Derived { .. } => scope.has_derived = true,
                }
            }
        }
        scope
    }

    fn select(&self, select: &Select, q: &Query, outer: &Scope) -> ComponentSet {
        let mut scope = self.scope_for(select, outer);
        let mut facts = Facts::default();
        let mut set = ComponentSet::default();

        for item in &select.items {
            let canon = match item {
                SelectItem::Wildcard => "*".to_string(),
                SelectItem::QualifiedWildcard(t) => format!("{}.*", scope.resolve_table(t)),
                SelectItem::Expr { expr, alias } => {
                    let c = self.expr(expr, &scope, &mut facts);
                    if let Some(a) = alias {
                        scope.outputs.insert(a.to_lowercase(), c.clone());
                    }
                    c
                }
            };
            set.select_items.insert(canon);
        }
        if select.distinct {
            set.keywords.insert("distinct".into());
        }

        if let Some(from) = &select.from {
            for factor in from.factors() {
                match factor {
                    TableFactor::Table { name, .. } => {
                        set.from_tables.insert(name.to_lowercase());
                    }
                    TableFactor::Derived { query, .. } => {
                        facts.keywords.insert("nested".into());
                        set.from_tables
                            .insert(format!("({})", self.query(query, &scope).canonical_key()));
                    }
                }
            }
            // ON conditions are not compared, but nested queries inside them still count.
            for join in &from.joins {
                if let Some(on) = &join.on {
                    let mut scratch = Facts::default();
                    self.expr(on, &scope, &mut scratch);
                    if scratch.keywords.contains("nested") {
                        facts.keywords.insert("nested".into());
                    }
                }
            }
        }

        if let Some(cond) = &select.selection {
            facts.keywords.insert("where".into());
            self.conditions(cond, &scope, &mut facts, &mut set.where_conditions);
        }
        if !select.group_by.is_empty() {
            facts.keywords.insert("group".into());
            for g in &select.group_by {
                let c = self.expr(g, &scope, &mut facts);
                set.group_by_items.insert(c);
            }
        }
        if let Some(h) = &select.having {
            facts.keywords.insert("having".into());
            self.conditions(h, &scope, &mut facts, &mut set.having_conditions);
        }
        if q.compound.is_none() {
            if !q.order_by.is_empty() {
                facts.keywords.insert("order".into());
            }
            for item in &q.order_by {
                let c = self.expr(&item.expr, &scope, &mut facts);
                let dir = if item.descending { "desc" } else { "asc" };
                set.order_by_items.insert(format!("{c} {dir}"));
            }
            if q.limit.is_some() {
                facts.keywords.insert("limit".into());
            }
        }
        set.aggregates = facts.aggregates;
        set.keywords.extend(facts.keywords);
        set
    }

    /// Flattens AND/OR trees into atomic conditions.
    fn conditions(&self, e: &Expr, scope: &Scope, facts: &mut Facts, out: &mut BTreeSet<String>) {
        match e {
            Expr::Binary {
                op: op @ (BinaryOp::And | BinaryOp::Or),
                left,
                right,
            } => {
                facts.keywords.insert(op.symbol().into());
                self.conditions(left, scope, facts, out);
                self.conditions(right, scope, facts, out);
            }
            other => {
                let c = self.expr(other, scope, facts);
                out.insert(c);
            }
        }
    }

    fn column(&self, table: Option<&str>, name: &str, scope: &Scope) -> String {
        let col = name.to_lowercase();
        if let Some(t) = table {
            return format!("{}.{col}", scope.resolve_table(t));
        }
        if let Some(out) = scope.outputs.get(&col) {
            return out.clone();
        }
        if !scope.has_derived && scope.from_tables.len() == 1 {
            return format!("{}.{col}", scope.from_tables[0]);
        }
        if let Some(schema) = self.schema {
            let owners: Vec<&String> = scope
                .from_tables
                .iter()
                .filter(|t| {
                    schema.tables.iter().any(|st| {
                        st.name.eq_ignore_ascii_case(t)
                            && st.columns.iter().any(|c| c.name.eq_ignore_ascii_case(&col))
                    })
                })
                .collect();
            if owners.len() == 1 {
                return format!("{}.{col}", owners[0]);
            }
        }
        col
    }

    fn expr(&self, e: &Expr, scope: &Scope, facts: &mut Facts) -> String {
        match e {
            Expr::Column { table, name } => self.column(table.as_deref(), name, scope),
            Expr::Literal(Literal::Null) => "null".into(),
            Expr::Literal(_) => "_".into(),
            Expr::Star => "*".into(),
            Expr::Unary { op, expr } => {
                let inner = self.expr(expr, scope, facts);
                match op {
                    UnaryOp::Not => {
                        facts.keywords.insert("not".into());
                        format!("not ({inner})")
                    }
                    UnaryOp::Neg => format!("-{inner}"),
                    UnaryOp::Pos => inner,
                    UnaryOp::BitNot => format!("~{inner}"),
                }
            }
            Expr::Binary { op, left, right } => {
                if matches!(op, BinaryOp::And | BinaryOp::Or) {
                    facts.keywords.insert(op.symbol().into());
                }
                let l = self.expr(left, scope, facts);
                let r = self.expr(right, scope, facts);
                if op.is_comparison() {
                    format!("{l} {} {r}", op.symbol())
                } else {
                    format!("({l} {} {r})", op.symbol())
                }
            }
            Expr::Function { name, distinct, args } => {
                if is_aggregate(name) {
                    facts.aggregates.insert(name.to_lowercase());
                }
                let args: Vec<String> = args.iter().map(|a| self.expr(a, scope, facts)).collect();
                let d = if *distinct { "distinct " } else { "" };
                format!("{}({d}{})", name.to_lowercase(), args.join(", "))
            }
            Expr::Case {
                operand,
                branches,
                default,
            } => {
                let mut s = String::from("case");
                if let Some(o) = operand {
                    let _ = write!(s, " {}", self.expr(o, scope, facts));
                }
                for (w, t) in branches {
                    let w = self.expr(w, scope, facts);
                    let t = self.expr(t, scope, facts);
                    let _ = write!(s, " when {w} then {t}");
                }
                if let Some(d) = default {
                    let _ = write!(s, " else {}", self.expr(d, scope, facts));
                }
                s.push_str(" end");
                s
            }
            Expr::Cast { expr, type_name } => {
                format!("cast({} as {type_name})", self.expr(expr, scope, facts))
            }
            Expr::Between {
                expr,
                negated,
                low,
                high,
            } => {
                let x = self.expr(expr, scope, facts);
                let lo = self.expr(low, scope, facts);
                let hi = self.expr(high, scope, facts);
                format!("{x} {}between {lo} and {hi}", self.not(*negated, facts))
            }
            Expr::InList { expr, negated, list } => {
                facts.keywords.insert("in".into());
                let x = self.expr(expr, scope, facts);
                let items: BTreeSet<String> = list.iter().map(|i| self.expr(i, scope, facts)).collect();
                let items: Vec<String> = items.into_iter().collect();
                format!("{x} {}in ({})", self.not(*negated, facts), items.join(", "))
            }
            Expr::InSubquery { expr, negated, query } => {
                facts.keywords.insert("in".into());
                facts.keywords.insert("nested".into());
                let x = self.expr(expr, scope, facts);
                let sub = self.query(query, scope).canonical_key();
                format!("{x} {}in ({sub})", self.not(*negated, facts))
            }
            Expr::Like {
                expr,
                negated,
                op,
                pattern,
            } => {
                facts.keywords.insert("like".into());
                let x = self.expr(expr, scope, facts);
                let p = self.expr(pattern, scope, facts);
                format!("{x} {}{op} {p}", self.not(*negated, facts))
            }
            Expr::IsNull { expr, negated } => {
                let x = self.expr(expr, scope, facts);
                format!("{x} is {}null", self.not(*negated, facts))
            }
            Expr::Is { left, negated, right } => {
                let l = self.expr(left, scope, facts);
                let r = self.expr(right, scope, facts);
                format!("{l} is {}{r}", self.not(*negated, facts))
            }
            Expr::Exists { negated, query } => {
                facts.keywords.insert("nested".into());
                let sub = self.query(query, scope).canonical_key();
                format!("{}exists ({sub})", self.not(*negated, facts))
            }
            Expr::Subquery(query) => {
                facts.keywords.insert("nested".into());
                format!("({})", self.query(query, scope).canonical_key())
            }
            Expr::Tuple(items) => {
                let items: Vec<String> = items.iter().map(|i| self.expr(i, scope, facts)).collect();
                format!("({})", items.join(", "))
            }
        }
    }

    fn not(&self, negated: bool, facts: &mut Facts) -> &'static str {
        if negated {
            facts.keywords.insert("not".into());
            "not "
        } else {
            ""
        }
    }
}
