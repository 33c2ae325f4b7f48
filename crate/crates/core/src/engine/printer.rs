//! Renders a syntax tree back to SQL text in a given dialect.

use std::fmt::Write;

use super::ast::*;
use super::mode::{DialectMode, LimitStyle};
use super::parser::is_reserved;
use super::value::format_float;

pub fn print_query(q: &Query, mode: &DialectMode) -> String {
    let mut p = Printer { mode: *mode, out: String::new() };
    p.query(q);
    p.out
}

pub fn print_expr(e: &Expr, mode: &DialectMode) -> String {
    let mut p = Printer { mode: *mode, out: String::new() };
    p.expr(e);
    p.out
}

/// Quotes `name` only when it would not read back as the same bare identifier.
pub fn quote_ident(name: &str, mode: &DialectMode) -> String {
    let plain = !name.is_empty()
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_reserved(name);
    if plain {
        return name.to_string();
    }
    let q = mode.identifier_quote.char();
    let escaped = name.replace(q, &format!("{q}{q}"));
    format!("{q}{escaped}{q}")
}

struct Printer {
    mode: DialectMode,
    out: String,
}

impl Printer {
    fn ident(&mut self, name: &str) {
        let s = quote_ident(name, &self.mode);
        self.out.push_str(&s);
    }

    fn query(&mut self, q: &Query) {
        if !q.ctes.is_empty() {
            self.out.push_str("WITH ");
            for (i, c) in q.ctes.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                self.ident(&c.name);
                self.out.push_str(" AS (");
                self.query(&c.query);
                self.out.push(')');
            }
            self.out.push(' ');
        }
        self.select(&q.body);
        if !q.order_by.is_empty() {
            self.out.push_str(" ORDER BY ");
            self.order_items(&q.order_by);
        }
        match self.mode.limit_style {
            LimitStyle::Limit => {
                if let Some(l) = q.limit {
                    let _ = write!(self.out, " LIMIT {}", l);
                }
                if let Some(o) = q.offset {
                    let _ = write!(self.out, " OFFSET {}", o);
                }
            }
            LimitStyle::FetchFirst => {
                if let Some(o) = q.offset {
                    let _ = write!(self.out, " OFFSET {} ROWS", o);
                }
                if let Some(l) = q.limit {
                    let _ = write!(self.out, " FETCH FIRST {} ROWS ONLY", l);
                }
            }
        }
    }

    fn order_items(&mut self, items: &[OrderItem]) {
        for (i, o) in items.iter().enumerate() {
            if i > 0 {
                self.out.push_str(", ");
            }
            self.expr(&o.expr);
            if o.desc {
                self.out.push_str(" DESC");
            }
        }
    }

    fn select(&mut self, s: &Select) {
        self.out.push_str("SELECT ");
        if s.distinct {
            self.out.push_str("DISTINCT ");
        }
        for (i, item) in s.items.iter().enumerate() {
            if i > 0 {
                self.out.push_str(", ");
            }
            match item {
                SelectItem::Wildcard => self.out.push('*'),
                SelectItem::QualifiedWildcard(q) => {
                    self.ident(q);
                    self.out.push_str(".*");
                }
                SelectItem::Expr { expr, alias } => {
                    self.expr(expr);
                    if let Some(a) = alias {
                        self.out.push_str(" AS ");
                        self.ident(a);
                    }
                }
            }
        }
        if let Some(from) = &s.from {
            self.out.push_str(" FROM ");
            self.table_ref(&from.base);
            for j in &from.joins {
                match j.kind {
                    JoinKind::Comma => self.out.push_str(", "),
                    JoinKind::Inner => self.out.push_str(" JOIN "),
                    JoinKind::Left => self.out.push_str(" LEFT JOIN "),
                    JoinKind::Cross => self.out.push_str(" CROSS JOIN "),
                }
                self.table_ref(&j.table);
                if let Some(on) = &j.on {
                    self.out.push_str(" ON ");
                    self.expr(on);
                }
            }
        }
        if let Some(w) = &s.selection {
            self.out.push_str(" WHERE ");
            self.expr(w);
        }
        if !s.group_by.is_empty() {
            self.out.push_str(" GROUP BY ");
            for (i, g) in s.group_by.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                self.expr(g);
            }
        }
        if let Some(h) = &s.having {
            self.out.push_str(" HAVING ");
            self.expr(h);
        }
    }

    fn table_ref(&mut self, t: &TableRef) {
        match t {
            TableRef::Table { name, alias } => {
                self.ident(name);
                if let Some(a) = alias {
                    self.out.push_str(" AS ");
                    self.ident(a);
                }
            }
            TableRef::Subquery { query, alias } => {
                self.out.push('(');
                self.query(query);
                self.out.push(')');
                if let Some(a) = alias {
                    self.out.push_str(" AS ");
                    self.ident(a);
                }
            }
        }
    }

    /// Prints `e`, parenthesized when it binds looser than `min`.
    fn child(&mut self, e: &Expr, min: u8) {
        if e.precedence() < min {
            self.out.push('(');
            self.expr(e);
            self.out.push(')');
        } else {
            self.expr(e);
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Literal(l) => self.literal(l),
            Expr::Column { table, name } => {
                if let Some(t) = table {
                    self.ident(t);
                    self.out.push('.');
                }
                self.ident(name);
            }
            Expr::Unary { op: UnaryOp::Not, expr } => {
                self.out.push_str("NOT ");
                self.child(expr, 3);
            }
            Expr::Unary { op: UnaryOp::Neg, expr } => {
                self.out.push('-');
                // `--` would start a comment
                let needs_parens = expr.precedence() < 8 || matches!(**expr, Expr::Literal(Literal::Int(i)) if i < 0);
                if needs_parens {
                    self.out.push('(');
                    self.expr(expr);
                    self.out.push(')');
                } else {
                    self.expr(expr);
                }
            }
            Expr::Binary { op, left, right } => {
                let p = op.precedence();
                self.child(left, p);
                let _ = write!(self.out, " {} ", op.symbol());
                self.child(right, p + 1);
            }
            Expr::Like { expr, pattern, negated, case_insensitive } => {
                self.child(expr, 5);
                if *negated {
                    self.out.push_str(" NOT");
                }
                self.out.push_str(if *case_insensitive { " ILIKE " } else { " LIKE " });
                self.child(pattern, 5);
            }
            Expr::InList { expr, list, negated } => {
                self.child(expr, 5);
                self.out.push_str(if *negated { " NOT IN (" } else { " IN (" });
                for (i, x) in list.iter().enumerate() {
                    if i > 0 {
                        self.out.push_str(", ");
                    }
                    self.expr(x);
                }
                self.out.push(')');
            }
            Expr::InSubquery { expr, query, negated } => {
                self.child(expr, 5);
                self.out.push_str(if *negated { " NOT IN (" } else { " IN (" });
                self.query(query);
                self.out.push(')');
            }
            Expr::Between { expr, low, high, negated } => {
                self.child(expr, 5);
                self.out.push_str(if *negated { " NOT BETWEEN " } else { " BETWEEN " });
                self.child(low, 5);
                self.out.push_str(" AND ");
                self.child(high, 5);
            }
            Expr::IsNull { expr, negated } => {
                self.child(expr, 5);
                self.out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
            }
            Expr::Exists { query, negated } => {
                self.out.push_str(if *negated { "NOT EXISTS (" } else { "EXISTS (" });
                self.query(query);
                self.out.push(')');
            }
            Expr::Subquery(q) => {
                self.out.push('(');
                self.query(q);
                self.out.push(')');
            }
            Expr::Cast { expr, ty, syntax } => {
                let double_colon = *syntax == CastSyntax::DoubleColon && self.mode.allow_double_colon_cast;
                if double_colon {
                    self.child(expr, 9);
                    let _ = write!(self.out, "::{}", ty.sql_name());
                } else {
                    self.out.push_str("CAST(");
                    self.expr(expr);
                    let _ = write!(self.out, " AS {})", ty.sql_name());
                }
            }
            Expr::Aggregate { func, arg, distinct, filter } => {
                self.out.push_str(func.name());
                self.out.push('(');
                if *distinct {
                    self.out.push_str("DISTINCT ");
                }
                match arg {
                    Some(a) => self.expr(a),
                    None => self.out.push('*'),
                }
                self.out.push(')');
                if let Some(f) = filter {
                    self.out.push_str(" FILTER (WHERE ");
                    self.expr(f);
                    self.out.push(')');
                }
            }
            Expr::Function { name, args } => {
                self.out.push_str(name);
                self.out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        self.out.push_str(", ");
                    }
                    self.expr(a);
                }
                self.out.push(')');
            }
            Expr::Window { func, partition_by, order_by } => {
                self.out.push_str(func.name());
                self.out.push_str("() OVER (");
                if !partition_by.is_empty() {
                    self.out.push_str("PARTITION BY ");
                    for (i, p) in partition_by.iter().enumerate() {
                        if i > 0 {
                            self.out.push_str(", ");
                        }
                        self.expr(p);
                    }
                    if !order_by.is_empty() {
                        self.out.push(' ');
                    }
                }
                if !order_by.is_empty() {
                    self.out.push_str("ORDER BY ");
                    self.order_items(order_by);
                }
                self.out.push(')');
            }
            Expr::Case { operand, whens, else_result } => {
                self.out.push_str("CASE");
                if let Some(o) = operand {
                    self.out.push(' ');
                    self.expr(o);
                }
                for (w, t) in whens {
                    self.out.push_str(" WHEN ");
                    self.expr(w);
                    self.out.push_str(" THEN ");
                    self.expr(t);
                }
                if let Some(e) = else_result {
                    self.out.push_str(" ELSE ");
                    self.expr(e);
                }
                self.out.push_str(" END");
            }
        }
    }

    fn literal(&mut self, l: &Literal) {
        match l {
            Literal::Null => self.out.push_str("NULL"),
            Literal::Bool(true) => self.out.push_str("TRUE"),
            Literal::Bool(false) => self.out.push_str("FALSE"),
            Literal::Int(i) => {
                let _ = write!(self.out, "{}", i);
            }
            Literal::Float(f) => {
                let s = format_float(*f);
                if s.contains(['.', 'e', 'E']) {
                    self.out.push_str(&s);
                } else {
                    let _ = write!(self.out, "{}.0", s);
                }
            }
            Literal::Str(s) => {
                self.out.push('\'');
                self.out.push_str(&s.replace('\'', "''"));
                self.out.push('\'');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::parser::parse_sql;
    use crate::model::Dialect;

    fn roundtrip(sql: &str, d: Dialect) {
        let mode = DialectMode::for_dialect(d);
        let q = parse_sql(sql, &mode).unwrap();
        let printed = print_query(&q, &mode);
        let q2 = parse_sql(&printed, &mode).unwrap_or_else(|e| panic!("{printed}: {e}"));
        assert_eq!(q, q2, "{printed}");
    }

    #[test]
    fn roundtrips_corpus_shapes() {
        roundtrip(
            "SELECT avg(T1.rating_score) AS average_rating, T2.director_name FROM ratings AS T1 JOIN movies AS T2 ON T1.movie_id = T2.movie_id WHERE T2.movie_title = 'When Will I Be Loved' GROUP BY T2.director_name",
            Dialect::Mysql,
        );
        roundtrip("SELECT count(*) FROM head WHERE head.age::INTEGER > 56", Dialect::Postgres);
        roundtrip(
            "SELECT T3.keyword_name FROM movie AS T1 JOIN movie_keyword AS T2 ON T1.movie_id = T2.movie_id JOIN keyword AS T3 ON T2.keyword_id = T3.keyword_id WHERE T1.release_date BETWEEN '2006-01-01' AND '2006-12-31' GROUP BY T3.keyword_name ORDER BY COUNT(T3.keyword_name) DESC LIMIT 1",
            Dialect::Postgres,
        );
        roundtrip("SELECT a FROM t OFFSET 1 ROWS FETCH FIRST 2 ROWS ONLY", Dialect::Oracle);
        roundtrip("SELECT -(-1), - -a, (a - b) - c, a - (b - c), NOT NOT x FROM t", Dialect::Sqlite);
        roundtrip("SELECT `select`, `odd name` FROM `t`", Dialect::Mysql);
    }

    #[test]
    fn cast_spelling_follows_dialect() {
        let pg = DialectMode::for_dialect(Dialect::Postgres);
        let q = parse_sql("SELECT a::FLOAT FROM t", &pg).unwrap();
        assert_eq!(print_query(&q, &pg), "SELECT a::FLOAT FROM t");
        assert_eq!(print_query(&q, &DialectMode::for_dialect(Dialect::Mysql)), "SELECT CAST(a AS FLOAT) FROM t");
    }

    #[test]
    fn limit_spelling_follows_dialect() {
        let q = parse_sql("SELECT a FROM t LIMIT 5 OFFSET 2", &DialectMode::for_dialect(Dialect::Sqlite)).unwrap();
        assert_eq!(print_query(&q, &DialectMode::for_dialect(Dialect::Oracle)), "SELECT a FROM t OFFSET 2 ROWS FETCH FIRST 5 ROWS ONLY");
    }
}
