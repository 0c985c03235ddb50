//! Recursive-descent parser for SELECT statements.
//!
//! Besides the tree, the parser records for every token whether it was
//! consumed as an identifier or a literal. Skeleton extraction uses those
//! roles to blank out database-specific tokens even when they collide with
//! keyword spellings (a column called `count`, say).

use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::SqlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Structural,
    Identifier,
    Literal,
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub query: Query,
    pub tokens: Vec<Token>,
    pub roles: Vec<Role>,
}

/// Words that terminate an expression or cannot be used as a bare alias.
const RESERVED: &[&str] = &[
    "select", "from", "where", "group", "by", "having", "order", "limit", "offset", "union",
    "intersect", "except", "join", "inner", "left", "right", "outer", "cross", "natural", "on",
    "using", "as", "and", "or", "not", "in", "exists", "like", "glob", "between", "is", "null",
    "case", "when", "then", "else", "end", "distinct", "all", "asc", "desc", "with", "cast",
    "escape",
];

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
}

pub fn parse(sql: &str) -> Result<Parsed, SqlError> {
    let tokens = tokenize(sql)?;
    let mut p = Parser {
        roles: vec![Role::Structural; tokens.len()],
        tokens: &tokens,
        pos: 0,
        depth: 0,
    };
    let query = p.parse_query()?;
    while p.peek_kind() == Some(TokenKind::Semicolon) {
        p.pos += 1;
    }
    if let Some(t) = p.peek() {
        return Err(p.error_at(t, "unexpected trailing input"));
    }
    let roles = p.roles;
    Ok(Parsed {
        query,
        tokens,
        roles,
    })
}

const MAX_DEPTH: usize = 48;

struct Parser<'a> {
    tokens: &'a [Token],
    roles: Vec<Role>,
    pos: usize,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + off)
    }

    fn peek_kind(&self) -> Option<TokenKind> {
        self.peek().map(|t| t.kind)
    }

    fn peek_word(&self, w: &str) -> bool {
        self.peek().is_some_and(|t| t.is_word(w))
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.peek_word(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kind(&mut self, kind: TokenKind) -> bool {
        if self.peek_kind() == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.peek().is_some_and(|t| t.kind == TokenKind::Op && t.text == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error_at(&self, tok: &Token, reason: &str) -> SqlError {
        SqlError::Parse {
            offset: tok.start,
            reason: format!("{reason} near `{}`", tok.text),
        }
    }

    fn error_here(&self, reason: &str) -> SqlError {
        match self.peek() {
            Some(t) => self.error_at(t, reason),
            None => SqlError::Parse {
                offset: self.tokens.last().map_or(0, |t| t.end),
                reason: format!("{reason} at end of input"),
            },
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), SqlError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            Err(self.error_here(&format!("expected {}", w.to_uppercase())))
        }
    }

    fn expect_kind(&mut self, kind: TokenKind, what: &str) -> Result<(), SqlError> {
        if self.eat_kind(kind) {
            Ok(())
        } else {
            Err(self.error_here(&format!("expected {what}")))
        }
    }

    fn enter(&mut self) -> Result<(), SqlError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error_here("nesting too deep"));
        }
        Ok(())
    }

    /// Consumes an identifier (bare non-reserved word or quoted identifier).
    fn identifier(&mut self) -> Result<String, SqlError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Word && !is_reserved(&t.text) => {
                self.roles[self.pos] = Role::Identifier;
                self.pos += 1;
                Ok(t.text.clone())
            }
            Some(t) if t.kind == TokenKind::QuotedIdent => {
                self.roles[self.pos] = Role::Identifier;
                self.pos += 1;
                Ok(t.text[1..t.text.len() - 1].to_string())
            }
            // Double-quoted names in identifier position (e.g. `FROM "Table"`).
            Some(t) if t.kind == TokenKind::String && t.text.starts_with('"') => {
                self.roles[self.pos] = Role::Identifier;
                self.pos += 1;
                Ok(t.text[1..t.text.len() - 1].replace("\"\"", "\""))
            }
            _ => Err(self.error_here("expected identifier")),
        }
    }

    fn optional_alias(&mut self) -> Result<Option<String>, SqlError> {
        if self.eat_word("as") {
            return self.identifier().map(Some);
        }
        match self.peek() {
            Some(t)
                if (t.kind == TokenKind::Word && !is_reserved(&t.text))
                    || t.kind == TokenKind::QuotedIdent =>
            {
                self.identifier().map(Some)
            }
            _ => Ok(None),
        }
    }

    fn parse_query(&mut self) -> Result<Query, SqlError> {
        self.enter()?;
        let mut ctes = Vec::new();
        if self.eat_word("with") {
            loop {
                let name = self.identifier()?;
                self.expect_word("as")?;
                self.expect_kind(TokenKind::LParen, "(")?;
                let q = self.parse_query()?;
                self.expect_kind(TokenKind::RParen, ")")?;
                ctes.push((name, q));
                if !self.eat_kind(TokenKind::Comma) {
                    break;
                }
            }
        }
        let select = self.parse_select()?;
        let op = if self.eat_word("union") {
            Some(if self.eat_word("all") {
                SetOperator::UnionAll
            } else {
                SetOperator::Union
            })
        } else if self.eat_word("intersect") {
            Some(SetOperator::Intersect)
        } else if self.eat_word("except") {
            Some(SetOperator::Except)
        } else {
            None
        };
        let mut query = Query {
            ctes,
            select,
            compound: None,
            order_by: Vec::new(),
            limit: None,
            offset: None,
        };
        if let Some(op) = op {
            // Allow a parenthesized right-hand side.
            let rest = if self.peek_kind() == Some(TokenKind::LParen)
                && self.peek_at(1).is_some_and(|t| t.is_word("select"))
            {
                self.pos += 1;
                let q = self.parse_query()?;
                self.expect_kind(TokenKind::RParen, ")")?;
                q
            } else {
                self.parse_query()?
            };
            query.compound = Some((op, Box::new(rest)));
        } else {
            self.parse_order_limit(&mut query)?;
        }
        self.depth -= 1;
        Ok(query)
    }

    fn parse_order_limit(&mut self, query: &mut Query) -> Result<(), SqlError> {
        if self.eat_word("order") {
            self.expect_word("by")?;
            loop {
                let expr = self.parse_expr()?;
                let descending = if self.eat_word("desc") {
                    true
                } else {
                    self.eat_word("asc");
                    false
                };
                query.order_by.push(OrderItem { expr, descending });
                if !self.eat_kind(TokenKind::Comma) {
                    break;
                }
            }
        }
        if self.eat_word("limit") {
            let first = self.parse_expr()?;
            if self.eat_word("offset") {
                query.limit = Some(first);
                query.offset = Some(self.parse_expr()?);
            } else if self.eat_kind(TokenKind::Comma) {
                query.offset = Some(first);
                query.limit = Some(self.parse_expr()?);
            } else {
                query.limit = Some(first);
            }
        }
        Ok(())
    }

    fn parse_select(&mut self) -> Result<Select, SqlError> {
        self.expect_word("select")?;
        let mut select = Select::default();
        if self.eat_word("distinct") {
            select.distinct = true;
        } else {
            self.eat_word("all");
        }
        loop {
            select.items.push(self.parse_select_item()?);
            if !self.eat_kind(TokenKind::Comma) {
                break;
            }
        }
        if self.eat_word("from") {
            select.from = Some(self.parse_from()?);
        }
        if self.eat_word("where") {
            select.selection = Some(self.parse_expr()?);
        }
        if self.eat_word("group") {
            self.expect_word("by")?;
            loop {
                select.group_by.push(self.parse_expr()?);
                if !self.eat_kind(TokenKind::Comma) {
                    break;
                }
            }
        }
        if self.eat_word("having") {
            select.having = Some(self.parse_expr()?);
        }
        Ok(select)
    }

    fn parse_select_item(&mut self) -> Result<SelectItem, SqlError> {
        if self.eat_op("*") {
            return Ok(SelectItem::Wildcard);
        }
        // `t.*`
        if let (Some(a), Some(dot), Some(star)) = (self.peek(), self.peek_at(1), self.peek_at(2)) {
            if matches!(a.kind, TokenKind::Word | TokenKind::QuotedIdent)
                && dot.kind == TokenKind::Dot
                && star.kind == TokenKind::Op
                && star.text == "*"
            {
                let table = self.identifier()?;
                self.pos += 2;
                return Ok(SelectItem::QualifiedWildcard(table));
            }
        }
        let expr = self.parse_expr()?;
        let alias = self.optional_alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    fn parse_from(&mut self) -> Result<From, SqlError> {
        let first = self.parse_table_factor()?;
        let mut joins = Vec::new();
        loop {
            let kind = if self.eat_kind(TokenKind::Comma) {
                JoinKind::Comma
            } else if self.peek_word("join") || self.peek_word("inner") {
                self.eat_word("inner");
                self.expect_word("join")?;
                JoinKind::Inner
            } else if self.peek_word("left") || self.peek_word("right") {
                self.pos += 1;
                self.eat_word("outer");
                self.expect_word("join")?;
                JoinKind::Left
            } else if self.eat_word("cross") {
                self.expect_word("join")?;
                JoinKind::Cross
            } else if self.eat_word("natural") {
                self.eat_word("inner");
                self.expect_word("join")?;
                JoinKind::Inner
            } else {
                break;
            };
            let factor = self.parse_table_factor()?;
            let mut join = Join {
                kind,
                factor,
                on: None,
                using: Vec::new(),
            };
            if self.eat_word("on") {
                join.on = Some(self.parse_expr()?);
            } else if self.eat_word("using") {
                self.expect_kind(TokenKind::LParen, "(")?;
                loop {
                    join.using.push(self.identifier()?);
                    if !self.eat_kind(TokenKind::Comma) {
                        break;
                    }
                }
                self.expect_kind(TokenKind::RParen, ")")?;
            }
            joins.push(join);
        }
        Ok(From { first, joins })
    }

    fn parse_table_factor(&mut self) -> Result<TableFactor, SqlError> {
        if self.eat_kind(TokenKind::LParen) {
            if self.peek_word("select") || self.peek_word("with") {
                let q = self.parse_query()?;
                self.expect_kind(TokenKind::RParen, ")")?;
                let alias = self.optional_alias()?;
                return Ok(TableFactor::Derived {
                    query: Box::new(q),
                    alias,
                });
            }
            // Parenthesized join source: `(t1 JOIN t2 ON ...)` is rare; only a
            // single parenthesized table is accepted.
            let inner = self.parse_table_factor()?;
            self.expect_kind(TokenKind::RParen, ")")?;
            return Ok(inner);
        }
        let mut name = self.identifier()?;
        if self.eat_kind(TokenKind::Dot) {
            // schema-qualified name; keep the table part
            name = self.identifier()?;
        }
        let alias = self.optional_alias()?;
        Ok(TableFactor::Table { name, alias })
    }

    pub fn parse_expr(&mut self) -> Result<Expr, SqlError> {
        self.enter()?;
        let e = self.parse_or();
        self.depth -= 1;
        e
    }

    fn parse_or(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.parse_and()?;
        while self.eat_word("or") {
            let right = self.parse_and()?;
            left = binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.parse_not()?;
        while self.eat_word("and") {
            let right = self.parse_not()?;
            left = binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn parse_not(&mut self) -> Result<Expr, SqlError> {
        if self.peek_word("not") && !self.peek_at(1).is_some_and(|t| t.is_word("exists")) {
            self.pos += 1;
            self.enter()?;
            let inner = self.parse_not()?;
            self.depth -= 1;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(inner),
            });
        }
        self.parse_comparison()
    }

    fn parse_comparison(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.parse_additive()?;
        loop {
            let tok = match self.peek() {
                Some(t) => t,
                None => break,
            };
            if tok.kind == TokenKind::Op {
                let op = match tok.text.as_str() {
                    "=" | "==" => BinaryOp::Eq,
                    "!=" | "<>" => BinaryOp::NotEq,
                    "<" => BinaryOp::Lt,
                    "<=" => BinaryOp::LtEq,
                    ">" => BinaryOp::Gt,
                    ">=" => BinaryOp::GtEq,
                    _ => break,
                };
                self.pos += 1;
                let right = self.parse_additive()?;
                left = binary(op, left, right);
                continue;
            }
            if tok.is_word("is") {
                self.pos += 1;
                let negated = self.eat_word("not");
                if self.eat_word("null") {
                    left = Expr::IsNull {
                        expr: Box::new(left),
                        negated,
                    };
                } else {
                    let right = self.parse_additive()?;
                    left = Expr::Is {
                        left: Box::new(left),
                        negated,
                        right: Box::new(right),
                    };
                }
                continue;
            }
            // Postfix NOT NULL / NOTNULL / ISNULL
            if tok.is_word("isnull") || tok.is_word("notnull") {
                self.pos += 1;
                left = Expr::IsNull {
                    expr: Box::new(left),
                    negated: tok.is_word("notnull"),
                };
                continue;
            }
            let negated = tok.is_word("not")
                && self.peek_at(1).is_some_and(|t| {
                    t.is_word("in") || t.is_word("like") || t.is_word("glob") || t.is_word("between")
                });
            if negated {
                self.pos += 1;
            }
            let tok = self.peek().expect("checked above");
            if tok.is_word("in") {
                self.pos += 1;
                left = self.parse_in_rhs(left, negated)?;
            } else if tok.is_word("like") || tok.is_word("glob") {
                self.pos += 1;
                let op = tok.lower();
                let pattern = self.parse_additive()?;
                if self.eat_word("escape") {
                    self.parse_additive()?;
                }
                left = Expr::Like {
                    expr: Box::new(left),
                    negated,
                    op,
                    pattern: Box::new(pattern),
                };
            } else if tok.is_word("between") {
                self.pos += 1;
                let low = self.parse_additive()?;
                self.expect_word("and")?;
                let high = self.parse_additive()?;
                left = Expr::Between {
                    expr: Box::new(left),
                    negated,
                    low: Box::new(low),
                    high: Box::new(high),
                };
            } else {
                break;
            }
        }
        Ok(left)
    }

    fn parse_in_rhs(&mut self, left: Expr, negated: bool) -> Result<Expr, SqlError> {
        self.expect_kind(TokenKind::LParen, "(")?;
        if self.peek_word("select") || self.peek_word("with") {
            let q = self.parse_query()?;
            self.expect_kind(TokenKind::RParen, ")")?;
            return Ok(Expr::InSubquery {
                expr: Box::new(left),
                negated,
                query: Box::new(q),
            });
        }
        let mut list = Vec::new();
        if self.peek_kind() != Some(TokenKind::RParen) {
            loop {
                list.push(self.parse_expr()?);
                if !self.eat_kind(TokenKind::Comma) {
                    break;
                }
            }
        }
        self.expect_kind(TokenKind::RParen, ")")?;
        Ok(Expr::InList {
            expr: Box::new(left),
            negated,
            list,
        })
    }

    fn parse_additive(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.parse_multiplicative()?;
        loop {
            let op = if self.eat_op("+") {
                BinaryOp::Plus
            } else if self.eat_op("-") {
                BinaryOp::Minus
            } else if self.eat_op("&") {
                BinaryOp::BitAnd
            } else if self.eat_op("|") {
                BinaryOp::BitOr
            } else if self.eat_op("<<") {
                BinaryOp::ShiftLeft
            } else if self.eat_op(">>") {
                BinaryOp::ShiftRight
            } else {
                break;
            };
            let right = self.parse_multiplicative()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn parse_multiplicative(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.parse_concat()?;
        loop {
            let op = if self.eat_op("*") {
                BinaryOp::Mul
            } else if self.eat_op("/") {
                BinaryOp::Div
            } else if self.eat_op("%") {
                BinaryOp::Mod
            } else {
                break;
            };
            let right = self.parse_concat()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn parse_concat(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.parse_unary()?;
        while self.eat_op("||") {
            let right = self.parse_unary()?;
            left = binary(BinaryOp::Concat, left, right);
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Expr, SqlError> {
        let op = if self.eat_op("-") {
            Some(UnaryOp::Neg)
        } else if self.eat_op("+") {
            Some(UnaryOp::Pos)
        } else if self.eat_op("~") {
            Some(UnaryOp::BitNot)
        } else {
            None
        };
        match op {
            Some(op) => {
                self.enter()?;
                let inner = self.parse_unary()?;
                self.depth -= 1;
                // Fold signs into numeric literals so `-5` is one value.
                if let (UnaryOp::Neg, Expr::Literal(Literal::Number(n))) = (op, &inner) {
                    return Ok(Expr::Literal(Literal::Number(format!("-{n}"))));
                }
                Ok(Expr::Unary {
                    op,
                    expr: Box::new(inner),
                })
            }
            None => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, SqlError> {
        let tok = match self.peek() {
            Some(t) => t,
            None => return Err(self.error_here("expected expression")),
        };
        match tok.kind {
            TokenKind::Number => {
                self.roles[self.pos] = Role::Literal;
                self.pos += 1;
                Ok(Expr::Literal(Literal::Number(tok.text.clone())))
            }
            TokenKind::String => {
                self.roles[self.pos] = Role::Literal;
                self.pos += 1;
                let quote = &tok.text[..1];
                let body = &tok.text[1..tok.text.len() - 1];
                Ok(Expr::Literal(Literal::String(
                    body.replace(&format!("{quote}{quote}"), quote),
                )))
            }
            TokenKind::LParen => {
                self.pos += 1;
                if self.peek_word("select") || self.peek_word("with") {
                    let q = self.parse_query()?;
                    self.expect_kind(TokenKind::RParen, ")")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let first = self.parse_expr()?;
                if self.eat_kind(TokenKind::Comma) {
                    let mut items = vec![first];
                    loop {
                        items.push(self.parse_expr()?);
                        if !self.eat_kind(TokenKind::Comma) {
                            break;
                        }
                    }
                    self.expect_kind(TokenKind::RParen, ")")?;
                    return Ok(Expr::Tuple(items));
                }
                self.expect_kind(TokenKind::RParen, ")")?;
                Ok(first)
            }
            TokenKind::Word if tok.is_word("null") => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Null))
            }
            TokenKind::Word if tok.is_word("case") => self.parse_case(),
            TokenKind::Word if tok.is_word("cast") => {
                self.pos += 1;
                self.expect_kind(TokenKind::LParen, "(")?;
                let expr = self.parse_expr()?;
                self.expect_word("as")?;
                let mut type_name = self.identifier()?;
                // e.g. `DECIMAL(10, 2)`
                if self.eat_kind(TokenKind::LParen) {
                    while !self.eat_kind(TokenKind::RParen) {
                        if self.peek().is_none() {
                            return Err(self.error_here("unterminated type"));
                        }
                        self.pos += 1;
                    }
                }
                type_name = type_name.to_lowercase();
                self.expect_kind(TokenKind::RParen, ")")?;
                Ok(Expr::Cast {
                    expr: Box::new(expr),
                    type_name,
                })
            }
            TokenKind::Word if tok.is_word("exists") || tok.is_word("not") => {
                let negated = self.eat_word("not");
                self.expect_word("exists")?;
                self.expect_kind(TokenKind::LParen, "(")?;
                let q = self.parse_query()?;
                self.expect_kind(TokenKind::RParen, ")")?;
                Ok(Expr::Exists {
                    negated,
                    query: Box::new(q),
                })
            }
            TokenKind::Word | TokenKind::QuotedIdent => {
                let is_call = tok.kind == TokenKind::Word
                    && self.peek_at(1).map(|t| t.kind) == Some(TokenKind::LParen)
                    && !is_reserved(&tok.text);
                if is_call {
                    return self.parse_call();
                }
                let first = self.identifier()?;
                if self.peek_kind() == Some(TokenKind::Dot) {
                    self.pos += 1;
                    let name = self.identifier()?;
                    return Ok(Expr::Column {
                        table: Some(first),
                        name,
                    });
                }
                Ok(Expr::Column {
                    table: None,
                    name: first,
                })
            }
            _ => Err(self.error_at(tok, "expected expression")),
        }
    }

    fn parse_call(&mut self) -> Result<Expr, SqlError> {
        let tok = &self.tokens[self.pos];
        let name = tok.text.to_lowercase();
        if !is_aggregate(&name) {
            self.roles[self.pos] = Role::Identifier;
        }
        self.pos += 2; // name and `(`
        let mut distinct = false;
        let mut args = Vec::new();
        if self.eat_op("*") {
            args.push(Expr::Star);
        } else if self.peek_kind() != Some(TokenKind::RParen) {
            distinct = self.eat_word("distinct");
            loop {
                args.push(self.parse_expr()?);
                if !self.eat_kind(TokenKind::Comma) {
                    break;
                }
            }
        }
        self.expect_kind(TokenKind::RParen, ")")?;
        Ok(Expr::Function {
            name,
            distinct,
            args,
        })
    }

    fn parse_case(&mut self) -> Result<Expr, SqlError> {
        self.expect_word("case")?;
        let operand = if self.peek_word("when") {
            None
        } else {
            Some(Box::new(self.parse_expr()?))
        };
        let mut branches = Vec::new();
        while self.eat_word("when") {
            let cond = self.parse_expr()?;
            self.expect_word("then")?;
            let value = self.parse_expr()?;
            branches.push((cond, value));
        }
        if branches.is_empty() {
            return Err(self.error_here("CASE without WHEN"));
        }
        let default = if self.eat_word("else") {
            Some(Box::new(self.parse_expr()?))
        } else {
            None
        };
        self.expect_word("end")?;
        Ok(Expr::Case {
            operand,
            branches,
            default,
        })
    }
}

fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
    Expr::Binary {
        op,
        left: Box::new(left),
        right: Box::new(right),
    }
}
