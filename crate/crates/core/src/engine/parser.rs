//! Recursive-descent parser for the SELECT subset.
//!
//! Constructs a dialect forbids are recorded as [`Violation`]s and parsing
//! continues as if they were allowed, so a conformance check can report all
//! of them in one pass. [`parse_sql`] turns the first violation into an error.

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::error::{EngineError, EngineResult};
use super::lexer::{tokenize, QuoteKind, Tok, Token};
use super::mode::{DialectMode, LimitStyle};
use crate::model::Dialect;

/// A construct the target dialect does not accept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub construct: String,
    pub dialect: Dialect,
    pub start: usize,
    pub end: usize,
    pub message: String,
}

const RESERVED: &[&str] = &[
    "ALL",
    "AND",
    "AS",
    "ASC",
    "BETWEEN",
    "BY",
    "CASE",
    "CAST",
    "CROSS",
    "DESC",
    "DISTINCT",
    "ELSE",
    "END",
    "EXCEPT",
    "EXISTS",
    "FALSE",
    "FETCH",
    "FILTER",
    "FROM",
    "FULL",
    "GROUP",
    "HAVING",
    "ILIKE",
    "IN",
    "INNER",
    "INTERSECT",
    "IS",
    "JOIN",
    "LEFT",
    "LIKE",
    "LIMIT",
    "NATURAL",
    "NOT",
    "NULL",
    "OFFSET",
    "ON",
    "OR",
    "ORDER",
    "OUTER",
    "OVER",
    "PARTITION",
    "RIGHT",
    "SELECT",
    "THEN",
    "TRUE",
    "UNION",
    "USING",
    "WHEN",
    "WHERE",
    "WITH",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

/// Parses `text` under `mode`, failing on syntax errors and on the first
/// dialect violation.
pub fn parse_sql(text: &str, mode: &DialectMode) -> EngineResult<Query> {
    let (query, violations) = parse_collecting(text, mode)?;
    if let Some(v) = violations.first() {
        return Err(EngineError { class: super::error::EngineErrorClass::DialectViolation, message: v.message.clone(), position: Some(v.start) });
    }
    Ok(query)
}

/// Parses and returns the tree together with every dialect violation found.
pub fn parse_collecting(text: &str, mode: &DialectMode) -> EngineResult<(Query, Vec<Violation>)> {
    let toks = tokenize(text, mode)?;
    let mut p = Parser { src: text, toks, pos: 0, mode: *mode, violations: Vec::new(), depth: 0 };
    let q = p.parse_query()?;
    if p.peek_tok() == &Tok::Semicolon {
        p.pos += 1;
    }
    if p.peek_tok() != &Tok::Eof {
        return Err(p.error("unexpected trailing input"));
    }
    Ok((q, p.violations))
}

const MAX_DEPTH: usize = 64;

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
    mode: DialectMode,
    violations: Vec<Violation>,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_tok(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, detail: &str) -> EngineError {
        let t = self.peek();
        let near = if t.tok == Tok::Eof { "end of input" } else { &self.src[t.start..] };
        EngineError::syntax(&self.mode, near, t.start, detail)
    }

    fn violation(&mut self, construct: &str, hint: &str, start: usize, end: usize) {
        let err = EngineError::dialect_violation(&self.mode, construct, hint, start);
        self.violations.push(Violation { construct: construct.to_string(), dialect: self.mode.dialect, start, end, message: err.message });
    }

    fn at_kw(&self, kw: &str) -> bool {
        self.peek().is_word(kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> EngineResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {}", kw)))
        }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek_tok() == t {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> EngineResult<()> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {}", what)))
        }
    }

    fn enter(&mut self) -> EngineResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("expression nested too deeply"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    /// Whether the current token can start an identifier.
    fn at_ident(&self) -> bool {
        match self.peek_tok() {
            Tok::Word(w) => !is_reserved(w),
            Tok::Quoted(..) => true,
            _ => false,
        }
    }

    fn parse_ident(&mut self) -> EngineResult<String> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Word(w) if !is_reserved(&w) => {
                self.next();
                Ok(w)
            }
            Tok::Quoted(s, kind) => {
                self.next();
                if kind == QuoteKind::Back && self.mode.dialect != Dialect::Mysql {
                    self.violation("backquoted identifier", "quote identifiers with double quotes", t.start, t.end);
                }
                if s.is_empty() {
                    return Err(EngineError::syntax(&self.mode, &self.src[t.start..], t.start, "empty identifier"));
                }
                Ok(s)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn parse_u64(&mut self, what: &str) -> EngineResult<u64> {
        match self.peek_tok().clone() {
            Tok::Int(i) if i >= 0 => {
                self.next();
                Ok(i as u64)
            }
            _ => Err(self.error(&format!("expected non-negative integer {}", what))),
        }
    }

    fn parse_query(&mut self) -> EngineResult<Query> {
        self.enter()?;
        let mut ctes = Vec::new();
        if self.eat_kw("WITH") {
            loop {
                let name = self.parse_ident()?;
                self.expect_kw("AS")?;
                self.expect(&Tok::LParen, "(")?;
                let q = self.parse_query()?;
                self.expect(&Tok::RParen, ")")?;
                ctes.push(Cte { name, query: Box::new(q) });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let body = self.parse_select()?;
        if self.at_kw("UNION") || self.at_kw("INTERSECT") || self.at_kw("EXCEPT") {
            return Err(self.error("set operations are not supported"));
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            order_by = self.parse_order_items()?;
        }
        let (limit, offset) = self.parse_limit()?;
        self.leave();
        Ok(Query { ctes, body, order_by, limit, offset })
    }

    fn parse_order_items(&mut self) -> EngineResult<Vec<OrderItem>> {
        let mut items = Vec::new();
        loop {
            let expr = self.parse_expr()?;
            let desc = if self.eat_kw("DESC") {
                true
            } else {
                self.eat_kw("ASC");
                false
            };
            items.push(OrderItem { expr, desc });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        Ok(items)
    }

    fn parse_limit(&mut self) -> EngineResult<(Option<u64>, Option<u64>)> {
        let mut limit = None;
        let mut offset = None;
        let dialect = self.mode.dialect;
        if self.at_kw("LIMIT") {
            let t = self.next();
            if self.mode.limit_style == LimitStyle::FetchFirst {
                self.violation("LIMIT clause", "use OFFSET n ROWS FETCH FIRST n ROWS ONLY", t.start, t.end);
            }
            let first = self.parse_u64("after LIMIT")?;
            if self.peek_tok() == &Tok::Comma {
                let comma = self.next();
                if !matches!(dialect, Dialect::Mysql | Dialect::Sqlite) {
                    self.violation("LIMIT offset, count", "use LIMIT count OFFSET offset", t.start, comma.end);
                }
                offset = Some(first);
                limit = Some(self.parse_u64("after LIMIT offset,")?);
            } else {
                limit = Some(first);
                if self.eat_kw("OFFSET") {
                    offset = Some(self.parse_u64("after OFFSET")?);
                }
            }
            return Ok((limit, offset));
        }
        if self.at_kw("OFFSET") {
            let t = self.next();
            offset = Some(self.parse_u64("after OFFSET")?);
            if self.eat_kw("ROWS") || self.eat_kw("ROW") {
                if matches!(dialect, Dialect::Mysql | Dialect::Sqlite) {
                    self.violation("OFFSET n ROWS", "use LIMIT count OFFSET offset", t.start, self.toks[self.pos - 1].end);
                }
            } else if dialect == Dialect::Oracle {
                return Err(self.error("expected ROWS after OFFSET"));
            }
        }
        if self.at_kw("FETCH") {
            let t = self.next();
            if !(self.eat_kw("FIRST") || self.eat_kw("NEXT")) {
                return Err(self.error("expected FIRST or NEXT"));
            }
            limit = Some(self.parse_u64("after FETCH FIRST")?);
            if !(self.eat_kw("ROWS") || self.eat_kw("ROW")) {
                return Err(self.error("expected ROWS"));
            }
            self.expect_kw("ONLY")?;
            if matches!(dialect, Dialect::Mysql | Dialect::Sqlite) {
                self.violation("FETCH FIRST clause", "use LIMIT n", t.start, self.toks[self.pos - 1].end);
            }
        }
        Ok((limit, offset))
    }

    fn parse_select(&mut self) -> EngineResult<Select> {
        let select_tok = self.peek().clone();
        self.expect_kw("SELECT")?;
        let distinct = if self.eat_kw("DISTINCT") {
            true
        } else {
            self.eat_kw("ALL");
            false
        };
        let mut items = Vec::new();
        loop {
            items.push(self.parse_select_item()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        let from = if self.eat_kw("FROM") {
            Some(self.parse_from()?)
        } else {
            if self.mode.dialect == Dialect::Oracle {
                self.violation("SELECT without FROM", "select from DUAL", select_tok.start, select_tok.end);
            }
            None
        };
        let selection = if self.eat_kw("WHERE") { Some(self.parse_expr()?) } else { None };
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            loop {
                group_by.push(self.parse_expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let having = if self.eat_kw("HAVING") { Some(self.parse_expr()?) } else { None };
        Ok(Select { distinct, items, from, selection, group_by, having })
    }

    fn parse_select_item(&mut self) -> EngineResult<SelectItem> {
        if self.eat(&Tok::Star) {
            return Ok(SelectItem::Wildcard);
        }
        if matches!(self.peek_tok(), Tok::Word(_) | Tok::Quoted(..)) && self.peek_at(1) == &Tok::Dot && self.peek_at(2) == &Tok::Star {
            let q = self.parse_ident()?;
            self.next();
            self.next();
            return Ok(SelectItem::QualifiedWildcard(q));
        }
        let expr = self.parse_expr()?;
        let alias = self.parse_alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    fn parse_alias(&mut self) -> EngineResult<Option<String>> {
        if self.eat_kw("AS") {
            if let Tok::Str(s) = self.peek_tok().clone() {
                self.next();
                return Ok(Some(s));
            }
            return Ok(Some(self.parse_ident()?));
        }
        if self.at_ident() {
            return Ok(Some(self.parse_ident()?));
        }
        Ok(None)
    }

    fn parse_table_ref(&mut self) -> EngineResult<TableRef> {
        let start = self.peek().start;
        if self.eat(&Tok::LParen) {
            if !(self.at_kw("SELECT") || self.at_kw("WITH")) {
                return Err(self.error("expected subquery"));
            }
            let q = self.parse_query()?;
            self.expect(&Tok::RParen, ")")?;
            let end = self.toks[self.pos - 1].end;
            let alias = self.parse_alias()?;
            if alias.is_none() && matches!(self.mode.dialect, Dialect::Postgres | Dialect::Mysql) {
                self.violation("derived table without alias", "give the subquery an alias", start, end);
            }
            return Ok(TableRef::Subquery { query: Box::new(q), alias });
        }
        let name = self.parse_ident()?;
        let alias = self.parse_alias()?;
        Ok(TableRef::Table { name, alias })
    }

    fn parse_from(&mut self) -> EngineResult<FromClause> {
        let base = self.parse_table_ref()?;
        let mut joins = Vec::new();
        loop {
            if self.eat(&Tok::Comma) {
                let table = self.parse_table_ref()?;
                joins.push(Join { kind: JoinKind::Comma, table, on: None });
                continue;
            }
            let kind = if self.at_kw("JOIN") {
                self.next();
                JoinKind::Inner
            } else if self.at_kw("INNER") {
                self.next();
                self.expect_kw("JOIN")?;
                JoinKind::Inner
            } else if self.at_kw("LEFT") {
                self.next();
                self.eat_kw("OUTER");
                self.expect_kw("JOIN")?;
                JoinKind::Left
            } else if self.at_kw("CROSS") {
                self.next();
                self.expect_kw("JOIN")?;
                JoinKind::Cross
            } else if self.at_kw("RIGHT") || self.at_kw("FULL") || self.at_kw("NATURAL") {
                return Err(self.error("only INNER, LEFT and CROSS joins are supported"));
            } else {
                break;
            };
            let table = self.parse_table_ref()?;
            let on = if kind == JoinKind::Cross {
                None
            } else {
                if !self.eat_kw("ON") {
                    return Err(self.error("JOIN requires an ON condition"));
                }
                Some(self.parse_expr()?)
            };
            joins.push(Join { kind, table, on });
        }
        Ok(FromClause { base, joins })
    }

    pub fn parse_expr(&mut self) -> EngineResult<Expr> {
        self.enter()?;
        let r = self.parse_or();
        self.leave();
        r
    }

    fn parse_or(&mut self) -> EngineResult<Expr> {
        let mut left = self.parse_and()?;
        while self.eat_kw("OR") {
            let right = self.parse_and()?;
            left = Expr::Binary { op: BinOp::Or, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> EngineResult<Expr> {
        let mut left = self.parse_not()?;
        while self.eat_kw("AND") {
            let right = self.parse_not()?;
            left = Expr::Binary { op: BinOp::And, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn parse_not(&mut self) -> EngineResult<Expr> {
        if self.at_kw("NOT") && !matches!(self.peek_at(1), Tok::Word(w) if w.eq_ignore_ascii_case("exists")) {
            self.next();
            self.enter()?;
            let inner = self.parse_not()?;
            self.leave();
            return Ok(Expr::Unary { op: UnaryOp::Not, expr: Box::new(inner) });
        }
        self.parse_comparison()
    }

    fn parse_comparison(&mut self) -> EngineResult<Expr> {
        let mut left = self.parse_additive()?;
        loop {
            let op = match self.peek_tok() {
                Tok::Eq => Some(BinOp::Eq),
                Tok::Neq => Some(BinOp::Neq),
                Tok::Lt => Some(BinOp::Lt),
                Tok::Gt => Some(BinOp::Gt),
                Tok::Le => Some(BinOp::Le),
                Tok::Ge => Some(BinOp::Ge),
                _ => None,
            };
            if let Some(op) = op {
                self.next();
                let right = self.parse_additive()?;
                left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
                continue;
            }
            if self.at_kw("IS") {
                self.next();
                let negated = self.eat_kw("NOT");
                self.expect_kw("NULL")?;
                left = Expr::IsNull { expr: Box::new(left), negated };
                continue;
            }
            let negated = if self.at_kw("NOT")
                && matches!(self.peek_at(1), Tok::Word(w) if ["LIKE", "ILIKE", "IN", "BETWEEN"].iter().any(|k| w.eq_ignore_ascii_case(k)))
            {
                self.next();
                true
            } else {
                false
            };
            if self.at_kw("LIKE") || self.at_kw("ILIKE") {
                let t = self.next();
                let ci = t.is_word("ILIKE");
                if ci && !self.mode.allow_ilike {
                    self.violation("ILIKE", "use LOWER(expr) LIKE LOWER(pattern)", t.start, t.end);
                }
                let pattern = self.parse_additive()?;
                left = Expr::Like { expr: Box::new(left), pattern: Box::new(pattern), negated, case_insensitive: ci };
                continue;
            }
            if self.at_kw("BETWEEN") {
                self.next();
                let low = self.parse_additive()?;
                self.expect_kw("AND")?;
                let high = self.parse_additive()?;
                left = Expr::Between { expr: Box::new(left), low: Box::new(low), high: Box::new(high), negated };
                continue;
            }
            if self.at_kw("IN") {
                self.next();
                let open = self.peek().clone();
                self.expect(&Tok::LParen, "(")?;
                if self.at_kw("SELECT") || self.at_kw("WITH") {
                    let q = self.parse_query()?;
                    self.expect(&Tok::RParen, ")")?;
                    if self.mode.dialect == Dialect::Mysql && q.limit.is_some() {
                        let end = self.toks[self.pos - 1].end;
                        self.violation(
                            "LIMIT inside IN subquery",
                            "this version of MySQL doesn't yet support 'LIMIT & IN/ALL/ANY/SOME subquery'",
                            open.start,
                            end,
                        );
                    }
                    left = Expr::InSubquery { expr: Box::new(left), query: Box::new(q), negated };
                } else {
                    let mut list = Vec::new();
                    loop {
                        list.push(self.parse_expr()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                    self.expect(&Tok::RParen, ")")?;
                    left = Expr::InList { expr: Box::new(left), list, negated };
                }
                continue;
            }
            if negated {
                return Err(self.error("expected LIKE, IN or BETWEEN after NOT"));
            }
            break;
        }
        Ok(left)
    }

    fn parse_additive(&mut self) -> EngineResult<Expr> {
        let mut left = self.parse_multiplicative()?;
        loop {
            let t = self.peek().clone();
            let op = match t.tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                Tok::Concat => {
                    if self.mode.dialect == Dialect::Mysql {
                        self.violation("'||' string concatenation", "use CONCAT(a, b)", t.start, t.end);
                    }
                    BinOp::Concat
                }
                _ => break,
            };
            self.next();
            let right = self.parse_multiplicative()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn parse_multiplicative(&mut self) -> EngineResult<Expr> {
        let mut left = self.parse_unary()?;
        loop {
            let op = match self.peek_tok() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Mod,
                _ => break,
            };
            self.next();
            let right = self.parse_unary()?;
            left = Expr::Binary { op, left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> EngineResult<Expr> {
        if self.eat(&Tok::Minus) {
            self.enter()?;
            let inner = self.parse_unary()?;
            self.leave();
            return Ok(Expr::Unary { op: UnaryOp::Neg, expr: Box::new(inner) });
        }
        if self.eat(&Tok::Plus) {
            return self.parse_unary();
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> EngineResult<Expr> {
        let mut e = self.parse_primary()?;
        while self.peek_tok() == &Tok::DoubleColon {
            let t = self.next();
            let ty = self.parse_type()?;
            if !self.mode.allow_double_colon_cast {
                let end = self.toks[self.pos - 1].end;
                self.violation("'::' cast", "use CAST(expr AS type)", t.start, end);
            }
            e = Expr::Cast { expr: Box::new(e), ty, syntax: CastSyntax::DoubleColon };
        }
        Ok(e)
    }

    fn parse_type(&mut self) -> EngineResult<CastType> {
        let t = self.peek().clone();
        let Tok::Word(w) = &t.tok else {
            return Err(self.error("expected type name"));
        };
        self.next();
        let ty = match w.to_ascii_uppercase().as_str() {
            "INTEGER" | "INT" | "BIGINT" | "SMALLINT" | "INT4" | "INT8" | "UNSIGNED" => CastType::Integer,
            "SIGNED" => {
                self.eat_kw("INTEGER");
                CastType::Integer
            }
            "FLOAT" | "REAL" | "FLOAT8" | "FLOAT4" | "NUMERIC" | "DECIMAL" | "NUMBER" => CastType::Float,
            "DOUBLE" => {
                self.eat_kw("PRECISION");
                CastType::Float
            }
            "TEXT" | "VARCHAR" | "CHAR" | "VARCHAR2" => CastType::Text,
            other => {
                return Err(EngineError::unsupported(&format!("cast to {}", other)).at(t.start));
            }
        };
        if self.eat(&Tok::LParen) {
            self.parse_u64("type length")?;
            if self.eat(&Tok::Comma) {
                self.parse_u64("type scale")?;
            }
            self.expect(&Tok::RParen, ")")?;
        }
        Ok(ty)
    }

    fn parse_primary(&mut self) -> EngineResult<Expr> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Int(i) => {
                self.next();
                Ok(Expr::Literal(Literal::Int(i)))
            }
            Tok::Float(f) => {
                self.next();
                Ok(Expr::Literal(Literal::Float(f)))
            }
            Tok::Str(s) => {
                self.next();
                Ok(Expr::Literal(Literal::Str(s)))
            }
            Tok::LParen => {
                self.next();
                if self.at_kw("SELECT") || self.at_kw("WITH") {
                    let q = self.parse_query()?;
                    self.expect(&Tok::RParen, ")")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let e = self.parse_expr()?;
                self.expect(&Tok::RParen, ")")?;
                Ok(e)
            }
            Tok::Word(ref w) => {
                let upper = w.to_ascii_uppercase();
                match upper.as_str() {
                    "NULL" => {
                        self.next();
                        Ok(Expr::Literal(Literal::Null))
                    }
                    "TRUE" => {
                        self.next();
                        Ok(Expr::Literal(Literal::Bool(true)))
                    }
                    "FALSE" => {
                        self.next();
                        Ok(Expr::Literal(Literal::Bool(false)))
                    }
                    "CASE" => self.parse_case(),
                    "EXISTS" => {
                        self.next();
                        self.parse_exists(false)
                    }
                    "NOT" if matches!(self.peek_at(1), Tok::Word(w) if w.eq_ignore_ascii_case("EXISTS")) => {
                        self.next();
                        self.next();
                        self.parse_exists(true)
                    }
                    "CAST" => {
                        self.next();
                        self.expect(&Tok::LParen, "(")?;
                        let e = self.parse_expr()?;
                        self.expect_kw("AS")?;
                        let ty = self.parse_type()?;
                        self.expect(&Tok::RParen, ")")?;
                        Ok(Expr::Cast { expr: Box::new(e), ty, syntax: CastSyntax::Function })
                    }
                    _ if is_reserved(w) => Err(self.error("unexpected keyword")),
                    _ => self.parse_name_expr(),
                }
            }
            Tok::Quoted(..) => self.parse_name_expr(),
            Tok::Eof => Err(self.error("unexpected end of input")),
            _ => Err(self.error("expected expression")),
        }
    }

    fn parse_exists(&mut self, negated: bool) -> EngineResult<Expr> {
        self.expect(&Tok::LParen, "(")?;
        let q = self.parse_query()?;
        self.expect(&Tok::RParen, ")")?;
        Ok(Expr::Exists { query: Box::new(q), negated })
    }

    fn parse_case(&mut self) -> EngineResult<Expr> {
        self.expect_kw("CASE")?;
        let operand = if self.at_kw("WHEN") { None } else { Some(Box::new(self.parse_expr()?)) };
        let mut whens = Vec::new();
        while self.eat_kw("WHEN") {
            let w = self.parse_expr()?;
            self.expect_kw("THEN")?;
            let t = self.parse_expr()?;
            whens.push((w, t));
        }
        if whens.is_empty() {
            return Err(self.error("CASE requires at least one WHEN"));
        }
        let else_result = if self.eat_kw("ELSE") { Some(Box::new(self.parse_expr()?)) } else { None };
        self.expect_kw("END")?;
        Ok(Expr::Case { operand, whens, else_result })
    }

    fn parse_name_expr(&mut self) -> EngineResult<Expr> {
        let is_bare_word = matches!(self.peek_tok(), Tok::Word(_));
        let first = self.parse_ident()?;
        if is_bare_word && self.peek_tok() == &Tok::LParen {
            return self.parse_call(first);
        }
        if self.eat(&Tok::Dot) {
            let name = self.parse_ident()?;
            return Ok(Expr::Column { table: Some(first), name });
        }
        Ok(Expr::Column { table: None, name: first })
    }

    fn parse_call(&mut self, name: String) -> EngineResult<Expr> {
        let start = self.toks[self.pos - 1].start;
        self.expect(&Tok::LParen, "(")?;
        if let Some(func) = AggFunc::from_name(&name) {
            let distinct = self.eat_kw("DISTINCT");
            let arg = if func == AggFunc::Count && !distinct && self.eat(&Tok::Star) { None } else { Some(Box::new(self.parse_expr()?)) };
            self.expect(&Tok::RParen, ")")?;
            let filter = if self.at_kw("FILTER") {
                self.next();
                self.expect(&Tok::LParen, "(")?;
                self.expect_kw("WHERE")?;
                let f = self.parse_expr()?;
                self.expect(&Tok::RParen, ")")?;
                Some(Box::new(f))
            } else {
                None
            };
            if self.at_kw("OVER") {
                return Err(EngineError::unsupported("aggregate window functions").at(start));
            }
            return Ok(Expr::Aggregate { func, arg, distinct, filter });
        }
        let lower = name.to_ascii_lowercase();
        if lower == "row_number" || lower == "rank" {
            self.expect(&Tok::RParen, ")")?;
            self.expect_kw("OVER")?;
            self.expect(&Tok::LParen, "(")?;
            let mut partition_by = Vec::new();
            if self.eat_kw("PARTITION") {
                self.expect_kw("BY")?;
                loop {
                    partition_by.push(self.parse_expr()?);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
            }
            let mut order_by = Vec::new();
            if self.eat_kw("ORDER") {
                self.expect_kw("BY")?;
                order_by = self.parse_order_items()?;
            }
            self.expect(&Tok::RParen, ")")?;
            let func = if lower == "rank" { WindowFunc::Rank } else { WindowFunc::RowNumber };
            return Ok(Expr::Window { func, partition_by, order_by });
        }
        let mut args = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                args.push(self.parse_expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(&Tok::RParen, ")")?;
        }
        Ok(Expr::Function { name: name.to_ascii_uppercase(), args })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::error::EngineErrorClass;

    fn mode(d: Dialect) -> DialectMode {
        DialectMode::for_dialect(d)
    }

    #[test]
    fn double_colon_cast_in_postgres() {
        let q = parse_sql("SELECT count(*) FROM head WHERE head.age::INTEGER > 56", &mode(Dialect::Postgres)).unwrap();
        let Some(Expr::Binary { left, .. }) = &q.body.selection else { panic!() };
        assert!(matches!(**left, Expr::Cast { ty: CastType::Integer, syntax: CastSyntax::DoubleColon, .. }));
    }

    #[test]
    fn double_colon_cast_rejected_in_mysql() {
        let e = parse_sql("SELECT count(*) FROM head WHERE head.age::INTEGER > 56", &mode(Dialect::Mysql)).unwrap_err();
        assert_eq!(e.class, EngineErrorClass::DialectViolation);
        assert!(e.message.contains("'::' cast"), "{}", e.message);
        assert_eq!(e.position, Some(40));
    }

    #[test]
    fn ilike_only_in_postgres() {
        let sql = "SELECT keyword_name FROM keyword WHERE keyword_name ILIKE 'x'";
        assert!(parse_sql(sql, &mode(Dialect::Postgres)).is_ok());
        for d in [Dialect::Mysql, Dialect::Sqlite, Dialect::Oracle] {
            let e = parse_sql(sql, &mode(d)).unwrap_err();
            assert_eq!(e.class, EngineErrorClass::DialectViolation, "{d}");
            assert!(e.message.contains("ILIKE"));
        }
    }

    #[test]
    fn join_without_on_is_parse_error() {
        let e = parse_sql("SELECT a FROM t JOIN u WHERE a = 1", &mode(Dialect::Sqlite)).unwrap_err();
        assert_eq!(e.class, EngineErrorClass::Parse);
        assert!(e.message.contains("ON condition"));
    }

    #[test]
    fn limit_styles() {
        assert!(parse_sql("SELECT a FROM t LIMIT 5", &mode(Dialect::Oracle)).is_err());
        let q = parse_sql("SELECT a FROM t OFFSET 2 ROWS FETCH FIRST 5 ROWS ONLY", &mode(Dialect::Oracle)).unwrap();
        assert_eq!((q.limit, q.offset), (Some(5), Some(2)));
        let q = parse_sql("SELECT a FROM t LIMIT 2, 5", &mode(Dialect::Mysql)).unwrap();
        assert_eq!((q.limit, q.offset), (Some(5), Some(2)));
        assert!(parse_sql("SELECT a FROM t LIMIT 2, 5", &mode(Dialect::Postgres)).is_err());
        assert!(parse_sql("SELECT a FROM t FETCH FIRST 5 ROWS ONLY", &mode(Dialect::Mysql)).is_err());
    }

    #[test]
    fn window_and_filter_parse() {
        let sql = "SELECT director_name FROM (SELECT m.director_name, RANK() OVER (PARTITION BY m.director_id ORDER BY COUNT(r.rating_id) FILTER (WHERE r.rating_score::FLOAT > 5) DESC) as rank FROM movies AS m JOIN ratings r ON m.movie_id = r.movie_id GROUP BY m.director_id, m.director_name) subquery WHERE rank::INTEGER = 1";
        assert!(parse_sql(sql, &mode(Dialect::Postgres)).is_ok());
    }

    #[test]
    fn collects_every_violation() {
        let (_, v) = parse_collecting("SELECT `a`::INTEGER FROM `t` WHERE b ILIKE 'x' LIMIT 3", &mode(Dialect::Oracle)).unwrap();
        let constructs: Vec<_> = v.iter().map(|v| v.construct.as_str()).collect();
        assert_eq!(constructs, vec!["backquoted identifier", "'::' cast", "backquoted identifier", "ILIKE", "LIMIT clause"]);
    }

    #[test]
    fn mysql_limit_in_subquery() {
        let sql = "SELECT a FROM t WHERE a IN (SELECT b FROM u LIMIT 1)";
        assert!(parse_sql(sql, &mode(Dialect::Mysql)).is_err());
        assert!(parse_sql(sql, &mode(Dialect::Sqlite)).is_ok());
    }

    #[test]
    fn deep_nesting_is_bounded() {
        let sql = format!("SELECT {}1{} FROM t", "(".repeat(500), ")".repeat(500));
        let e = parse_sql(&sql, &mode(Dialect::Sqlite)).unwrap_err();
        assert_eq!(e.class, EngineErrorClass::Parse);
        let ok = format!("SELECT {}1{} FROM t", "(".repeat(50), ")".repeat(50));
        assert!(parse_sql(&ok, &mode(Dialect::Sqlite)).is_ok());
        let subq = format!("SELECT a FROM t WHERE a IN {}", "(SELECT a FROM t WHERE a IN ".repeat(100));
        assert!(parse_sql(&subq, &mode(Dialect::Sqlite)).is_err());
    }
}
