//! Evaluates a parsed [`Query`] against an [`InMemoryDb`].
//!
//! Semantics that differ between dialects (integer division, NULL ordering,
//! implicit text/number conversion, division by zero, strict GROUP BY) are
//! read from the [`DialectMode`].

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::db::InMemoryDb;
use super::error::{EngineError, EngineErrorClass, EngineResult};
use super::mode::DialectMode;
use super::parser::parse_sql;
use super::printer::print_expr;
use super::value::{lenient_number, strict_number, Value};
use crate::model::Dialect;

/// Rows plus column labels. Row order is meaningful only when the query
/// had a top-level ORDER BY.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// Checked cooperatively inside row loops.
    pub deadline: Option<Instant>,
}

pub fn execute(q: &Query, db: &InMemoryDb, mode: &DialectMode) -> EngineResult<ResultTable> {
    execute_with(q, db, mode, ExecOptions::default())
}

pub fn execute_with(q: &Query, db: &InMemoryDb, mode: &DialectMode, opts: ExecOptions) -> EngineResult<ResultTable> {
    let ex = Exec { db, mode: *mode, opts, ticks: Cell::new(0) };
    let rel = ex.query(q, None, &Vec::new())?;
    Ok(ResultTable { columns: rel.cols.into_iter().map(|c| c.name).collect(), rows: rel.rows })
}

/// Parse and execute in one step.
pub fn run_sql(sql: &str, db: &InMemoryDb, mode: &DialectMode) -> EngineResult<ResultTable> {
    let q = parse_sql(sql, mode)?;
    execute(&q, db, mode)
}

#[derive(Debug, Clone)]
struct ColMeta {
    qualifier: Option<String>,
    name: String,
}

impl ColMeta {
    fn display(&self) -> String {
        match &self.qualifier {
            Some(q) => format!("{}.{}", q, self.name),
            None => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Rel {
    cols: Vec<ColMeta>,
    rows: Vec<Vec<Value>>,
}

type Ctes = Vec<(String, Rc<Rel>)>;
type WindowMap = HashMap<usize, Vec<Value>>;

#[derive(Clone, Copy)]
struct Scope<'a> {
    cols: &'a [ColMeta],
    row: &'a [Value],
    group: Option<&'a [Vec<Value>]>,
    window: Option<(&'a WindowMap, usize)>,
    parent: Option<&'a Scope<'a>>,
    ctes: &'a Ctes,
}

/// One output candidate: a source row, or a group with a representative row.
struct Ctx {
    row: Vec<Value>,
    group: Option<Vec<Vec<Value>>>,
}

enum Proj<'q> {
    Col(usize),
    Expr(&'q Expr),
}

enum KeySrc<'q> {
    Proj(usize),
    Expr(&'q Expr),
}

struct Exec<'d> {
    db: &'d InMemoryDb,
    mode: DialectMode,
    opts: ExecOptions,
    ticks: Cell<u32>,
}

fn truth_value(b: Option<bool>) -> Value {
    match b {
        None => Value::Null,
        Some(true) => Value::Int(1),
        Some(false) => Value::Int(0),
    }
}

fn literal(l: &Literal) -> Value {
    match l {
        Literal::Null => Value::Null,
        Literal::Bool(b) => Value::Int(*b as i64),
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(f) => Value::Float(*f),
        Literal::Str(s) => Value::Text(s.clone()),
    }
}

fn is_text_literal(e: &Expr) -> bool {
    matches!(e, Expr::Literal(Literal::Str(_)))
}

/// Direct sub-expressions, not descending into subqueries.
fn children(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Literal(_) | Expr::Column { .. } | Expr::Exists { .. } | Expr::Subquery(_) => vec![],
        Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } | Expr::Cast { expr, .. } | Expr::InSubquery { expr, .. } => {
            vec![expr]
        }
        Expr::Binary { left, right, .. } => vec![left, right],
        Expr::Like { expr, pattern, .. } => vec![expr, pattern],
        Expr::InList { expr, list, .. } => std::iter::once(&**expr).chain(list.iter()).collect(),
        Expr::Between { expr, low, high, .. } => vec![expr, low, high],
        Expr::Aggregate { arg, filter, .. } => arg.iter().chain(filter.iter()).map(|b| &**b).collect(),
        Expr::Function { args, .. } => args.iter().collect(),
        Expr::Window { partition_by, order_by, .. } => partition_by.iter().chain(order_by.iter().map(|o| &o.expr)).collect(),
        Expr::Case { operand, whens, else_result } => {
            let mut v: Vec<&Expr> = operand.iter().map(|b| &**b).collect();
            for (w, t) in whens {
                v.push(w);
                v.push(t);
            }
            v.extend(else_result.iter().map(|b| &**b));
            v
        }
    }
}

fn collect_windows<'e>(e: &'e Expr, out: &mut Vec<&'e Expr>) {
    if matches!(e, Expr::Window { .. }) {
        out.push(e);
    }
    for c in children(e) {
        collect_windows(c, out);
    }
}

/// SQL LIKE with `%` and `_`; no escape character.
pub fn like_match(s: &str, pattern: &str, case_insensitive: bool) -> bool {
    let fold = |t: &str| -> Vec<char> {
        if case_insensitive {
            t.to_lowercase().chars().collect()
        } else {
            t.chars().collect()
        }
    };
    let (s, p) = (fold(s), fold(pattern));
    let (mut si, mut pi) = (0, 0);
    let mut star: Option<usize> = None;
    let mut mark = 0;
    while si < s.len() {
        if pi < p.len() && p[pi] == '%' {
            star = Some(pi);
            mark = si;
            pi += 1;
        } else if pi < p.len() && (p[pi] == '_' || p[pi] == s[si]) {
            si += 1;
            pi += 1;
        } else if let Some(st) = star {
            pi = st + 1;
            mark += 1;
            si = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '%' {
        pi += 1;
    }
    pi == p.len()
}

impl<'d> Exec<'d> {
    fn tick(&self) -> EngineResult<()> {
        if let Some(d) = self.opts.deadline {
            let n = self.ticks.get().wrapping_add(1);
            self.ticks.set(n);
            if n % 256 == 1 && Instant::now() >= d {
                return Err(EngineError::deadline());
            }
        }
        Ok(())
    }

    fn query(&self, q: &Query, outer: Option<&Scope>, ctes: &Ctes) -> EngineResult<Rel> {
        self.tick()?;
        if q.ctes.is_empty() {
            return self.select(q, outer, ctes);
        }
        let mut env = ctes.clone();
        for c in &q.ctes {
            let rel = self.query(&c.query, None, &env)?;
            env.push((c.name.clone(), Rc::new(rel)));
        }
        self.select(q, outer, &env)
    }

    fn table_ref(&self, t: &TableRef, ctes: &Ctes) -> EngineResult<Rel> {
        match t {
            TableRef::Table { name, alias } => {
                let qual = alias.clone().unwrap_or_else(|| name.clone());
                if let Some((_, rel)) = ctes.iter().rev().find(|(n, _)| self.mode.names_equal(n, name)) {
                    let cols = rel.cols.iter().map(|c| ColMeta { qualifier: Some(qual.clone()), name: c.name.clone() }).collect();
                    return Ok(Rel { cols, rows: rel.rows.clone() });
                }
                if let Some(tab) = self.db.table(name, self.mode.case_sensitive_tables) {
                    let cols = tab.columns.iter().map(|c| ColMeta { qualifier: Some(qual.clone()), name: c.name.clone() }).collect();
                    return Ok(Rel { cols, rows: tab.rows.clone() });
                }
                if self.mode.dialect == Dialect::Oracle && name.eq_ignore_ascii_case("dual") {
                    return Ok(Rel {
                        cols: vec![ColMeta { qualifier: Some(qual), name: "DUMMY".into() }],
                        rows: vec![vec![Value::Text("X".into())]],
                    });
                }
                Err(EngineError::unknown_relation(&self.mode, &self.db.db_id, name))
            }
            TableRef::Subquery { query, alias } => {
                let rel = self.query(query, None, ctes)?;
                let cols = rel.cols.into_iter().map(|c| ColMeta { qualifier: alias.clone(), name: c.name }).collect();
                Ok(Rel { cols, rows: rel.rows })
            }
        }
    }

    fn eval_from(&self, f: &FromClause, outer: Option<&Scope>, ctes: &Ctes) -> EngineResult<Rel> {
        let mut rel = self.table_ref(&f.base, ctes)?;
        for j in &f.joins {
            let right = self.table_ref(&j.table, ctes)?;
            let mut cols = rel.cols.clone();
            cols.extend(right.cols.iter().cloned());
            let mut rows = Vec::new();
            for l in &rel.rows {
                let mut matched = false;
                for r in &right.rows {
                    self.tick()?;
                    let mut combined = l.clone();
                    combined.extend(r.iter().cloned());
                    let keep = match &j.on {
                        Some(on) => {
                            let sc = Scope { cols: &cols, row: &combined, group: None, window: None, parent: outer, ctes };
                            self.truth(on, &sc)? == Some(true)
                        }
                        None => true,
                    };
                    if keep {
                        matched = true;
                        rows.push(combined);
                    }
                }
                if j.kind == JoinKind::Left && !matched {
                    let mut c = l.clone();
                    c.extend(std::iter::repeat_n(Value::Null, right.cols.len()));
                    rows.push(c);
                }
            }
            rel = Rel { cols, rows };
        }
        Ok(rel)
    }

    fn resolve_local(&self, cols: &[ColMeta], table: Option<&str>, name: &str) -> EngineResult<Option<usize>> {
        let mut found = None;
        for (i, c) in cols.iter().enumerate() {
            if !c.name.eq_ignore_ascii_case(name) {
                continue;
            }
            if let Some(t) = table {
                match &c.qualifier {
                    Some(q) if self.mode.names_equal(q, t) => {}
                    _ => continue,
                }
            }
            if found.is_some() {
                return Err(EngineError::ambiguous_column(&self.mode, name));
            }
            found = Some(i);
        }
        Ok(found)
    }

    fn lookup(&self, sc: &Scope, table: Option<&str>, name: &str) -> EngineResult<Value> {
        let mut s = Some(sc);
        while let Some(cur) = s {
            if let Some(i) = self.resolve_local(cur.cols, table, name)? {
                return Ok(cur.row[i].clone());
            }
            s = cur.parent;
        }
        let q = match table {
            Some(t) => format!("{}.{}", t, name),
            None => name.to_string(),
        };
        Err(EngineError::unknown_column(&self.mode, &q))
    }

    fn same_expr(&self, a: &Expr, b: &Expr, cols: &[ColMeta]) -> bool {
        if a == b {
            return true;
        }
        if let (Expr::Column { table: ta, name: na }, Expr::Column { table: tb, name: nb }) = (a, b) {
            let ia = self.resolve_local(cols, ta.as_deref(), na).ok().flatten();
            let ib = self.resolve_local(cols, tb.as_deref(), nb).ok().flatten();
            return ia.is_some() && ia == ib;
        }
        false
    }

    /// First column reference in `e` that is neither aggregated nor grouped.
    fn ungrouped(&self, e: &Expr, groups: &[&Expr], cols: &[ColMeta]) -> Option<String> {
        if groups.iter().any(|g| self.same_expr(g, e, cols)) {
            return None;
        }
        match e {
            Expr::Aggregate { .. } => None,
            Expr::Column { table, name } => match self.resolve_local(cols, table.as_deref(), name) {
                Ok(Some(i)) => Some(cols[i].display()),
                _ => None,
            },
            _ => children(e).into_iter().find_map(|c| self.ungrouped(c, groups, cols)),
        }
    }

    fn resolve_group_expr<'q>(&self, g: &'q Expr, items: &'q [SelectItem], cols: &[ColMeta]) -> EngineResult<&'q Expr> {
        match g {
            Expr::Literal(Literal::Int(k)) => match items.get((*k as usize).wrapping_sub(1)) {
                Some(SelectItem::Expr { expr, .. }) if *k >= 1 => Ok(expr),
                _ => Err(EngineError::runtime(&self.mode, &format!("GROUP BY position {} is not in select list", k))),
            },
            Expr::Column { table: None, name } if self.resolve_local(cols, None, name)?.is_none() => {
                for it in items {
                    if let SelectItem::Expr { expr, alias: Some(a) } = it {
                        if a.eq_ignore_ascii_case(name) {
                            return Ok(expr);
                        }
                    }
                }
                Ok(g)
            }
            _ => Ok(g),
        }
    }

    fn select(&self, q: &Query, outer: Option<&Scope>, ctes: &Ctes) -> EngineResult<Rel> {
        let sel = &q.body;
        let src = match &sel.from {
            Some(f) => self.eval_from(f, outer, ctes)?,
            None => Rel { cols: Vec::new(), rows: vec![Vec::new()] },
        };
        let Rel { cols, rows: src_rows } = src;

        let mut rows = Vec::with_capacity(src_rows.len());
        for row in src_rows {
            self.tick()?;
            if let Some(w) = &sel.selection {
                let sc = Scope { cols: &cols, row: &row, group: None, window: None, parent: outer, ctes };
                if self.truth(w, &sc)? != Some(true) {
                    continue;
                }
            }
            rows.push(row);
        }

        let mut proj: Vec<Proj> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        let mut aliases: Vec<Option<&str>> = Vec::new();
        for item in &sel.items {
            match item {
                SelectItem::Wildcard => {
                    for (i, c) in cols.iter().enumerate() {
                        proj.push(Proj::Col(i));
                        labels.push(c.name.clone());
                        aliases.push(None);
                    }
                }
                SelectItem::QualifiedWildcard(t) => {
                    let before = proj.len();
                    for (i, c) in cols.iter().enumerate() {
                        if c.qualifier.as_deref().is_some_and(|x| self.mode.names_equal(x, t)) {
                            proj.push(Proj::Col(i));
                            labels.push(c.name.clone());
                            aliases.push(None);
                        }
                    }
                    if proj.len() == before {
                        return Err(EngineError::unknown_relation(&self.mode, &self.db.db_id, t));
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    proj.push(Proj::Expr(expr));
                    labels.push(match (alias, expr) {
                        (Some(a), _) => a.clone(),
                        (None, Expr::Column { name, .. }) => name.clone(),
                        (None, e) => print_expr(e, &self.mode),
                    });
                    aliases.push(alias.as_deref());
                }
            }
        }

        let proj_exprs = || {
            proj.iter().filter_map(|p| match p {
                Proj::Expr(e) => Some(*e),
                Proj::Col(_) => None,
            })
        };
        let has_agg = proj_exprs().any(Expr::contains_aggregate)
            || sel.having.as_ref().is_some_and(Expr::contains_aggregate)
            || q.order_by.iter().any(|o| o.expr.contains_aggregate());
        let grouped = has_agg || !sel.group_by.is_empty() || sel.having.is_some();

        let group_exprs: Vec<&Expr> = sel.group_by.iter().map(|g| self.resolve_group_expr(g, &sel.items, &cols)).collect::<EngineResult<_>>()?;

        if grouped && self.mode.strict_group_by {
            let has_gb = !sel.group_by.is_empty();
            for (i, p) in proj.iter().enumerate() {
                let bad = match p {
                    Proj::Col(ci) => {
                        let c = &cols[*ci];
                        let as_expr = Expr::Column { table: c.qualifier.clone(), name: c.name.clone() };
                        self.ungrouped(&as_expr, &group_exprs, &cols)
                    }
                    Proj::Expr(e) => self.ungrouped(e, &group_exprs, &cols),
                };
                if let Some(c) = bad {
                    return Err(EngineError::strict_group_by(&self.mode, &self.db.db_id, &c, i + 1, has_gb));
                }
            }
            if let Some(h) = &sel.having {
                if let Some(c) = self.ungrouped(h, &group_exprs, &cols) {
                    return Err(EngineError::strict_group_by(&self.mode, &self.db.db_id, &c, proj.len() + 1, has_gb));
                }
            }
        }

        let mut contexts: Vec<Ctx> = Vec::new();
        if !grouped {
            contexts.extend(rows.into_iter().map(|row| Ctx { row, group: None }));
        } else if group_exprs.is_empty() {
            let rep = rows.first().cloned().unwrap_or_else(|| vec![Value::Null; cols.len()]);
            contexts.push(Ctx { row: rep, group: Some(rows) });
        } else {
            let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
            for row in rows {
                self.tick()?;
                let sc = Scope { cols: &cols, row: &row, group: None, window: None, parent: outer, ctes };
                let key = group_exprs.iter().map(|g| self.eval(g, &sc)).collect::<EngineResult<Vec<_>>>()?;
                match index.get(&key) {
                    Some(&i) => contexts[i].group.as_mut().unwrap().push(row),
                    None => {
                        index.insert(key, contexts.len());
                        contexts.push(Ctx { row: row.clone(), group: Some(vec![row]) });
                    }
                }
            }
        }

        if let Some(h) = &sel.having {
            let mut kept = Vec::with_capacity(contexts.len());
            for ctx in contexts {
                let sc = Scope { cols: &cols, row: &ctx.row, group: ctx.group.as_deref(), window: None, parent: outer, ctes };
                if self.truth(h, &sc)? == Some(true) {
                    kept.push(ctx);
                }
            }
            contexts = kept;
        }

        let mut key_src = Vec::with_capacity(q.order_by.len());
        for o in &q.order_by {
            key_src.push(self.order_key(&o.expr, &proj, &aliases, &cols)?);
        }
        if sel.distinct && matches!(self.mode.dialect, Dialect::Postgres | Dialect::Oracle) {
            for k in &key_src {
                if let KeySrc::Expr(e) = k {
                    let listed = proj.iter().any(|p| match p {
                        Proj::Expr(x) => self.same_expr(x, e, &cols),
                        Proj::Col(i) => {
                            let c = &cols[*i];
                            self.same_expr(&Expr::Column { table: c.qualifier.clone(), name: c.name.clone() }, e, &cols)
                        }
                    });
                    if !listed {
                        let msg = match self.mode.dialect {
                            Dialect::Oracle => "ORA-01791: not a SELECTed expression".to_string(),
                            _ => "ERROR: for SELECT DISTINCT, ORDER BY expressions must appear in select list".to_string(),
                        };
                        return Err(EngineError::new(EngineErrorClass::DialectViolation, msg));
                    }
                }
            }
        }

        let mut wins: Vec<&Expr> = Vec::new();
        for e in proj_exprs() {
            collect_windows(e, &mut wins);
        }
        for o in &q.order_by {
            collect_windows(&o.expr, &mut wins);
        }
        let wmap = self.compute_windows(&wins, &contexts, &cols, outer, ctes)?;

        let mut out: Vec<(Vec<Value>, Vec<Value>)> = Vec::with_capacity(contexts.len());
        for (ci, ctx) in contexts.iter().enumerate() {
            self.tick()?;
            let sc = Scope { cols: &cols, row: &ctx.row, group: ctx.group.as_deref(), window: Some((&wmap, ci)), parent: outer, ctes };
            let mut vals = Vec::with_capacity(proj.len());
            for p in &proj {
                vals.push(match p {
                    Proj::Col(i) => ctx.row[*i].clone(),
                    Proj::Expr(e) => self.eval(e, &sc)?,
                });
            }
            let mut keys = Vec::with_capacity(key_src.len());
            for k in &key_src {
                keys.push(match k {
                    KeySrc::Proj(i) => vals[*i].clone(),
                    KeySrc::Expr(e) => self.eval(e, &sc)?,
                });
            }
            out.push((vals, keys));
        }

        if sel.distinct {
            let mut seen = HashSet::new();
            out.retain(|(v, _)| seen.insert(v.clone()));
        }
        if !q.order_by.is_empty() {
            out.sort_by(|a, b| {
                for (i, o) in q.order_by.iter().enumerate() {
                    let c = self.sort_cmp(&a.1[i], &b.1[i], o.desc);
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                Ordering::Equal
            });
        }
        let offset = q.offset.unwrap_or(0) as usize;
        let limit = q.limit.map(|l| l as usize).unwrap_or(usize::MAX);
        let rows = out.into_iter().skip(offset).take(limit).map(|(v, _)| v).collect();
        Ok(Rel { cols: labels.into_iter().map(|name| ColMeta { qualifier: None, name }).collect(), rows })
    }

    fn order_key<'q>(&self, e: &'q Expr, proj: &[Proj], aliases: &[Option<&str>], cols: &[ColMeta]) -> EngineResult<KeySrc<'q>> {
        match e {
            Expr::Literal(Literal::Int(k)) => {
                if *k >= 1 && (*k as usize) <= proj.len() {
                    Ok(KeySrc::Proj(*k as usize - 1))
                } else {
                    Err(EngineError::runtime(&self.mode, &format!("ORDER BY position {} is not in select list", k)))
                }
            }
            Expr::Column { table: None, name } => {
                if let Some(i) = aliases.iter().position(|a| a.is_some_and(|a| a.eq_ignore_ascii_case(name))) {
                    return Ok(KeySrc::Proj(i));
                }
                let _ = cols;
                Ok(KeySrc::Expr(e))
            }
            _ => Ok(KeySrc::Expr(e)),
        }
    }

    /// NULL placement follows the dialect: smallest in SQLite/MySQL, largest elsewhere.
    fn sort_cmp(&self, a: &Value, b: &Value, desc: bool) -> Ordering {
        let nulls_small = self.mode.nulls_sort_first();
        let ord = match (a.is_null(), b.is_null()) {
            (true, true) => Ordering::Equal,
            (true, false) => {
                if nulls_small {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            }
            (false, true) => {
                if nulls_small {
                    Ordering::Greater
                } else {
                    Ordering::Less
                }
            }
            _ => a.total_cmp(b),
        };
        if desc {
            ord.reverse()
        } else {
            ord
        }
    }

    fn compute_windows(&self, wins: &[&Expr], contexts: &[Ctx], cols: &[ColMeta], outer: Option<&Scope>, ctes: &Ctes) -> EngineResult<WindowMap> {
        let mut map = WindowMap::new();
        for w in wins {
            let Expr::Window { func, partition_by, order_by } = w else { continue };
            if order_by.len() > 1 {
                return Err(EngineError::unsupported("window ORDER BY with more than one key"));
            }
            let mut parts: Vec<Vec<usize>> = Vec::new();
            let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
            let mut okeys: Vec<Value> = Vec::with_capacity(contexts.len());
            for (i, ctx) in contexts.iter().enumerate() {
                let sc = Scope { cols, row: &ctx.row, group: ctx.group.as_deref(), window: None, parent: outer, ctes };
                let pk = partition_by.iter().map(|p| self.eval(p, &sc)).collect::<EngineResult<Vec<_>>>()?;
                okeys.push(match order_by.first() {
                    Some(o) => self.eval(&o.expr, &sc)?,
                    None => Value::Null,
                });
                match index.get(&pk) {
                    Some(&p) => parts[p].push(i),
                    None => {
                        index.insert(pk, parts.len());
                        parts.push(vec![i]);
                    }
                }
            }
            let desc = order_by.first().is_some_and(|o| o.desc);
            let mut vals = vec![Value::Null; contexts.len()];
            for mut idxs in parts {
                idxs.sort_by(|a, b| self.sort_cmp(&okeys[*a], &okeys[*b], desc));
                let mut rank = 0;
                for (pos, &ci) in idxs.iter().enumerate() {
                    let n = pos as i64 + 1;
                    let v = match func {
                        WindowFunc::RowNumber => n,
                        WindowFunc::Rank => {
                            if pos == 0 || okeys[idxs[pos - 1]] != okeys[ci] {
                                rank = n;
                            }
                            rank
                        }
                    };
                    vals[ci] = Value::Int(v);
                }
            }
            map.insert(*w as *const Expr as usize, vals);
        }
        Ok(map)
    }

    fn truth(&self, e: &Expr, sc: &Scope) -> EngineResult<Option<bool>> {
        Ok(match self.eval(e, sc)? {
            Value::Null => None,
            Value::Int(i) => Some(i != 0),
            Value::Float(f) => Some(f != 0.0),
            Value::Text(s) => Some(lenient_number(&s).as_f64().unwrap_or(0.0) != 0.0),
        })
    }

    /// Brings a text operand facing a number onto the numeric side.
    /// `None` means the values stay as they are (SQLite's mixed ordering).
    fn numeric_pair(&self, l: &Value, r: &Value, le: &Expr, re: &Expr, op: &str) -> EngineResult<Option<(Value, Value)>> {
        let conv = |v: &Value, e: &Expr, other: &Value| -> EngineResult<Option<Value>> {
            let Value::Text(s) = v else { return Ok(Some(v.clone())) };
            if self.mode.strict_types {
                if is_text_literal(e) {
                    return strict_number(s).map(Some).ok_or_else(|| EngineError::invalid_input(&self.mode, other.type_name(), s));
                }
                let (lt, rt) = if std::ptr::eq(v, l) { (v.type_name(), other.type_name()) } else { (other.type_name(), v.type_name()) };
                return Err(EngineError::operator_mismatch(&self.mode, op, lt, rt));
            }
            match self.mode.dialect {
                Dialect::Sqlite => Ok(strict_number(s)),
                _ => Ok(Some(lenient_number(s))),
            }
        };
        let a = conv(l, le, r)?;
        let b = conv(r, re, l)?;
        Ok(a.zip(b))
    }

    fn compare(&self, l: &Value, r: &Value, le: &Expr, re: &Expr, op: &str) -> EngineResult<Option<Ordering>> {
        if l.is_null() || r.is_null() {
            return Ok(None);
        }
        Ok(Some(match (l, r) {
            (Value::Text(a), Value::Text(b)) => {
                if self.mode.dialect == Dialect::Mysql {
                    a.to_lowercase().cmp(&b.to_lowercase())
                } else {
                    a.cmp(b)
                }
            }
            (Value::Text(_), _) | (_, Value::Text(_)) => match self.numeric_pair(l, r, le, re, op)? {
                Some((a, b)) => a.total_cmp(&b),
                None => l.total_cmp(r),
            },
            _ => l.total_cmp(r),
        }))
    }

    fn division_by_zero(&self) -> EngineResult<Value> {
        match self.mode.dialect {
            Dialect::Sqlite | Dialect::Mysql => Ok(Value::Null),
            Dialect::Oracle => Err(EngineError::new(EngineErrorClass::Runtime, "ORA-01476: divisor is equal to zero")),
            Dialect::Postgres => Err(EngineError::runtime(&self.mode, "division by zero")),
        }
    }

    fn arith(&self, op: BinOp, l: Value, r: Value, le: &Expr, re: &Expr) -> EngineResult<Value> {
        if l.is_null() || r.is_null() {
            return Ok(Value::Null);
        }
        let (a, b) = if matches!(l, Value::Text(_)) || matches!(r, Value::Text(_)) {
            match self.numeric_pair(&l, &r, le, re, op.symbol())? {
                Some(p) => p,
                None => {
                    let f = |v: &Value| match v {
                        Value::Text(s) => lenient_number(s),
                        o => o.clone(),
                    };
                    (f(&l), f(&r))
                }
            }
        } else {
            (l, r)
        };
        let overflow = || EngineError::runtime(&self.mode, "integer out of range");
        match (&a, &b) {
            (Value::Int(x), Value::Int(y)) => {
                let (x, y) = (*x, *y);
                Ok(Value::Int(match op {
                    BinOp::Add => x.checked_add(y).ok_or_else(overflow)?,
                    BinOp::Sub => x.checked_sub(y).ok_or_else(overflow)?,
                    BinOp::Mul => x.checked_mul(y).ok_or_else(overflow)?,
                    BinOp::Div => {
                        if y == 0 {
                            return self.division_by_zero();
                        }
                        if !self.mode.integer_division() {
                            return Ok(Value::Float(x as f64 / y as f64));
                        }
                        x.checked_div(y).ok_or_else(overflow)?
                    }
                    BinOp::Mod => {
                        if y == 0 {
                            return self.division_by_zero();
                        }
                        x.checked_rem(y).ok_or_else(overflow)?
                    }
                    _ => unreachable!("non-arithmetic operator"),
                }))
            }
            _ => {
                let x = a.as_f64().unwrap_or(0.0);
                let y = b.as_f64().unwrap_or(0.0);
                Ok(Value::Float(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div | BinOp::Mod if y == 0.0 => return self.division_by_zero(),
                    BinOp::Div => x / y,
                    BinOp::Mod => x % y,
                    _ => unreachable!("non-arithmetic operator"),
                }))
            }
        }
    }

    fn cast(&self, v: Value, ty: CastType) -> EngineResult<Value> {
        let to_int = |f: f64| -> EngineResult<Value> {
            let g = if self.mode.dialect == Dialect::Sqlite { f.trunc() } else { f.round() };
            if g.is_finite() && g.abs() < 9.2e18 {
                Ok(Value::Int(g as i64))
            } else {
                Err(EngineError::runtime(&self.mode, "integer out of range"))
            }
        };
        match (v, ty) {
            (Value::Null, _) => Ok(Value::Null),
            (v, CastType::Text) => Ok(Value::Text(v.render())),
            (Value::Int(i), CastType::Integer) => Ok(Value::Int(i)),
            (Value::Float(f), CastType::Integer) => to_int(f),
            (Value::Int(i), CastType::Float) => Ok(Value::Float(i as f64)),
            (Value::Float(f), CastType::Float) => Ok(Value::Float(f)),
            (Value::Text(s), CastType::Integer) => {
                if self.mode.strict_types {
                    match strict_number(&s) {
                        Some(Value::Int(i)) => Ok(Value::Int(i)),
                        Some(Value::Float(f)) if self.mode.dialect != Dialect::Postgres => to_int(f),
                        _ => Err(EngineError::invalid_input(&self.mode, "integer", &s)),
                    }
                } else {
                    match lenient_number(&s) {
                        Value::Float(f) => to_int(f),
                        other => Ok(other),
                    }
                }
            }
            (Value::Text(s), CastType::Float) => {
                let n = if self.mode.strict_types {
                    strict_number(&s).ok_or_else(|| EngineError::invalid_input(&self.mode, "double precision", &s))?
                } else {
                    lenient_number(&s)
                };
                Ok(Value::Float(n.as_f64().unwrap_or(0.0)))
            }
        }
    }

    fn numeric_arg(&self, func: &str, v: Value) -> EngineResult<Value> {
        match v {
            Value::Text(_) if self.mode.strict_types => Err(EngineError::undefined_function(&self.mode, func, "text")),
            Value::Text(s) => Ok(lenient_number(&s)),
            o => Ok(o),
        }
    }

    fn aggregate(&self, e: &Expr, sc: &Scope) -> EngineResult<Value> {
        let Expr::Aggregate { func, arg, distinct, filter } = e else { unreachable!("aggregate node") };
        let group = sc.group.ok_or_else(|| EngineError::runtime(&self.mode, "aggregate functions are not allowed here"))?;
        if filter.is_some() {
            return Err(EngineError::unsupported("aggregate FILTER clause"));
        }
        let Some(arg) = arg else { return Ok(Value::Int(group.len() as i64)) };
        let mut vals = Vec::new();
        for row in group {
            self.tick()?;
            let sub = Scope { row, group: None, window: None, ..*sc };
            let v = self.eval(arg, &sub)?;
            if !v.is_null() {
                vals.push(v);
            }
        }
        if *distinct {
            let mut seen = HashSet::new();
            vals.retain(|v| seen.insert(v.clone()));
        }
        match func {
            AggFunc::Count => Ok(Value::Int(vals.len() as i64)),
            AggFunc::Sum | AggFunc::Avg => {
                if vals.is_empty() {
                    return Ok(Value::Null);
                }
                let nums = vals.into_iter().map(|v| self.numeric_arg(func.name(), v)).collect::<EngineResult<Vec<_>>>()?;
                let n = nums.len() as f64;
                if *func == AggFunc::Sum && nums.iter().all(|v| matches!(v, Value::Int(_))) {
                    let mut acc: i64 = 0;
                    for v in &nums {
                        if let Value::Int(i) = v {
                            acc = acc.checked_add(*i).ok_or_else(|| EngineError::runtime(&self.mode, "integer out of range"))?;
                        }
                    }
                    return Ok(Value::Int(acc));
                }
                let total: f64 = nums.iter().filter_map(Value::as_f64).sum();
                Ok(Value::Float(if *func == AggFunc::Avg { total / n } else { total }))
            }
            AggFunc::Min => Ok(vals.into_iter().min_by(|a, b| a.total_cmp(b)).unwrap_or(Value::Null)),
            AggFunc::Max => Ok(vals.into_iter().max_by(|a, b| a.total_cmp(b)).unwrap_or(Value::Null)),
        }
    }

    fn function(&self, name: &str, args: &[Expr], sc: &Scope) -> EngineResult<Value> {
        let vals = args.iter().map(|a| self.eval(a, sc)).collect::<EngineResult<Vec<_>>>()?;
        let arity = |ok: bool| -> EngineResult<()> {
            if ok {
                Ok(())
            } else {
                Err(EngineError::runtime(&self.mode, &format!("wrong number of arguments to function {}()", name.to_lowercase())))
            }
        };
        match name {
            "LOWER" | "UPPER" | "LENGTH" => {
                arity(vals.len() == 1)?;
                let v = &vals[0];
                if v.is_null() {
                    return Ok(Value::Null);
                }
                let s = v.render();
                Ok(match name {
                    "LOWER" => Value::Text(s.to_lowercase()),
                    "UPPER" => Value::Text(s.to_uppercase()),
                    _ => Value::Int(s.chars().count() as i64),
                })
            }
            "ABS" => {
                arity(vals.len() == 1)?;
                Ok(match self.numeric_arg("abs", vals[0].clone())? {
                    Value::Int(i) => Value::Int(i.checked_abs().ok_or_else(|| EngineError::runtime(&self.mode, "integer out of range"))?),
                    Value::Float(f) => Value::Float(f.abs()),
                    o => o,
                })
            }
            "ROUND" => {
                arity(vals.len() == 1 || vals.len() == 2)?;
                let digits = match vals.get(1) {
                    Some(Value::Int(d)) => *d as i32,
                    Some(Value::Null) => return Ok(Value::Null),
                    Some(_) => return Err(EngineError::runtime(&self.mode, "round() precision must be an integer")),
                    None => 0,
                };
                Ok(match self.numeric_arg("round", vals[0].clone())? {
                    Value::Float(f) => {
                        let m = 10f64.powi(digits);
                        Value::Float((f * m).round() / m)
                    }
                    o => o,
                })
            }
            "COALESCE" => {
                arity(!vals.is_empty())?;
                Ok(vals.into_iter().find(|v| !v.is_null()).unwrap_or(Value::Null))
            }
            "CONCAT" => {
                arity(!vals.is_empty())?;
                if self.mode.dialect == Dialect::Mysql && vals.iter().any(Value::is_null) {
                    return Ok(Value::Null);
                }
                Ok(Value::Text(vals.iter().filter(|v| !v.is_null()).map(Value::render).collect()))
            }
            "SUBSTR" | "SUBSTRING" => {
                arity(vals.len() == 2 || vals.len() == 3)?;
                if vals.iter().any(Value::is_null) {
                    return Ok(Value::Null);
                }
                let chars: Vec<char> = vals[0].render().chars().collect();
                let start = vals[1].as_f64().unwrap_or(1.0) as i64;
                let len = vals.get(2).and_then(Value::as_f64).map(|l| l as i64).unwrap_or(chars.len() as i64);
                let from = (start.max(1) - 1) as usize;
                let to = (start - 1 + len).clamp(0, chars.len() as i64) as usize;
                Ok(Value::Text(if from < to { chars[from..to].iter().collect() } else { String::new() }))
            }
            _ => Err(EngineError::unknown_function(&self.mode, &name.to_lowercase())),
        }
    }

    fn eval(&self, e: &Expr, sc: &Scope) -> EngineResult<Value> {
        match e {
            Expr::Literal(l) => Ok(literal(l)),
            Expr::Column { table, name } => self.lookup(sc, table.as_deref(), name),
            Expr::Unary { op: UnaryOp::Not, expr } => Ok(truth_value(self.truth(expr, sc)?.map(|b| !b))),
            Expr::Unary { op: UnaryOp::Neg, expr } => {
                let v = self.eval(expr, sc)?;
                self.arith(BinOp::Sub, Value::Int(0), v, &Expr::Literal(Literal::Int(0)), expr)
            }
            Expr::Binary { op: BinOp::And, left, right } => {
                let l = self.truth(left, sc)?;
                if l == Some(false) {
                    return Ok(Value::Int(0));
                }
                let r = self.truth(right, sc)?;
                Ok(truth_value(match (l, r) {
                    (_, Some(false)) => Some(false),
                    (Some(true), Some(true)) => Some(true),
                    _ => None,
                }))
            }
            Expr::Binary { op: BinOp::Or, left, right } => {
                let l = self.truth(left, sc)?;
                if l == Some(true) {
                    return Ok(Value::Int(1));
                }
                let r = self.truth(right, sc)?;
                Ok(truth_value(match (l, r) {
                    (_, Some(true)) => Some(true),
                    (Some(false), Some(false)) => Some(false),
                    _ => None,
                }))
            }
            Expr::Binary { op, left, right } if op.is_comparison() => {
                let l = self.eval(left, sc)?;
                let r = self.eval(right, sc)?;
                let ord = self.compare(&l, &r, left, right, op.symbol())?;
                Ok(truth_value(ord.map(|o| match op {
                    BinOp::Eq => o == Ordering::Equal,
                    BinOp::Neq => o != Ordering::Equal,
                    BinOp::Lt => o == Ordering::Less,
                    BinOp::Gt => o == Ordering::Greater,
                    BinOp::Le => o != Ordering::Greater,
                    _ => o != Ordering::Less,
                })))
            }
            Expr::Binary { op: BinOp::Concat, left, right } => {
                let l = self.eval(left, sc)?;
                let r = self.eval(right, sc)?;
                let oracle = self.mode.dialect == Dialect::Oracle;
                if (l.is_null() || r.is_null()) && !oracle {
                    return Ok(Value::Null);
                }
                let part = |v: &Value| if v.is_null() { String::new() } else { v.render() };
                Ok(Value::Text(part(&l) + &part(&r)))
            }
            Expr::Binary { op, left, right } => {
                let l = self.eval(left, sc)?;
                let r = self.eval(right, sc)?;
                self.arith(*op, l, r, left, right)
            }
            Expr::Like { expr, pattern, negated, case_insensitive } => {
                let v = self.eval(expr, sc)?;
                let p = self.eval(pattern, sc)?;
                if v.is_null() || p.is_null() {
                    return Ok(Value::Null);
                }
                if self.mode.strict_types && !matches!(v, Value::Text(_)) {
                    let op = if *case_insensitive { "~~*" } else { "~~" };
                    return Err(EngineError::operator_mismatch(&self.mode, op, v.type_name(), "unknown"));
                }
                let ci = *case_insensitive || self.mode.like_case_insensitive();
                Ok(truth_value(Some(like_match(&v.render(), &p.render(), ci) != *negated)))
            }
            Expr::InList { expr, list, negated } => {
                let v = self.eval(expr, sc)?;
                let mut items = Vec::with_capacity(list.len());
                for it in list {
                    items.push((self.eval(it, sc)?, it));
                }
                self.membership(&v, expr, items.iter().map(|(x, e)| (x, *e)), *negated)
            }
            Expr::InSubquery { expr, query, negated } => {
                let v = self.eval(expr, sc)?;
                let rel = self.query(query, Some(sc), sc.ctes)?;
                if rel.cols.len() != 1 {
                    return Err(EngineError::runtime(&self.mode, "subquery has too many columns"));
                }
                let placeholder = Expr::Subquery(query.clone());
                self.membership(&v, expr, rel.rows.iter().map(|r| (&r[0], &placeholder)), *negated)
            }
            Expr::Between { expr, low, high, negated } => {
                let v = self.eval(expr, sc)?;
                let lo = self.eval(low, sc)?;
                let hi = self.eval(high, sc)?;
                let a = self.compare(&v, &lo, expr, low, ">=")?.map(|o| o != Ordering::Less);
                let b = self.compare(&v, &hi, expr, high, "<=")?.map(|o| o != Ordering::Greater);
                let both = match (a, b) {
                    (Some(false), _) | (_, Some(false)) => Some(false),
                    (Some(true), Some(true)) => Some(true),
                    _ => None,
                };
                Ok(truth_value(both.map(|x| x != *negated)))
            }
            Expr::IsNull { expr, negated } => {
                let v = self.eval(expr, sc)?;
                Ok(truth_value(Some(v.is_null() != *negated)))
            }
            Expr::Exists { query, negated } => {
                let rel = self.query(query, Some(sc), sc.ctes)?;
                Ok(truth_value(Some(rel.rows.is_empty() == *negated)))
            }
            Expr::Subquery(query) => {
                let rel = self.query(query, Some(sc), sc.ctes)?;
                if rel.cols.len() != 1 {
                    return Err(EngineError::runtime(&self.mode, "subquery has too many columns"));
                }
                match rel.rows.len() {
                    0 => Ok(Value::Null),
                    1 => Ok(rel.rows[0][0].clone()),
                    _ => Err(EngineError::runtime(&self.mode, "more than one row returned by a subquery used as an expression")),
                }
            }
            Expr::Cast { expr, ty, .. } => {
                let v = self.eval(expr, sc)?;
                self.cast(v, *ty)
            }
            Expr::Aggregate { .. } => self.aggregate(e, sc),
            Expr::Function { name, args } => self.function(name, args, sc),
            Expr::Window { .. } => match sc.window.and_then(|(m, i)| m.get(&(e as *const Expr as usize)).map(|v| v[i].clone())) {
                Some(v) => Ok(v),
                None => Err(EngineError::runtime(&self.mode, "window functions are not allowed here")),
            },
            Expr::Case { operand, whens, else_result } => {
                let base = match operand {
                    Some(o) => Some((self.eval(o, sc)?, &**o)),
                    None => None,
                };
                for (w, t) in whens {
                    let hit = match &base {
                        Some((bv, be)) => {
                            let wv = self.eval(w, sc)?;
                            self.compare(bv, &wv, be, w, "=")? == Some(Ordering::Equal)
                        }
                        None => self.truth(w, sc)? == Some(true),
                    };
                    if hit {
                        return self.eval(t, sc);
                    }
                }
                match else_result {
                    Some(e) => self.eval(e, sc),
                    None => Ok(Value::Null),
                }
            }
        }
    }

    fn membership<'v, I>(&self, v: &Value, ve: &Expr, items: I, negated: bool) -> EngineResult<Value>
    where
        I: Iterator<Item = (&'v Value, &'v Expr)>,
    {
        if v.is_null() {
            return Ok(Value::Null);
        }
        let mut saw_null = false;
        for (x, xe) in items {
            match self.compare(v, x, ve, xe, "=")? {
                Some(Ordering::Equal) => return Ok(truth_value(Some(!negated))),
                None => saw_null = true,
                _ => {}
            }
        }
        Ok(if saw_null { Value::Null } else { truth_value(Some(negated)) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::db::parse_database;

    fn db() -> InMemoryDb {
        parse_database(
            r#"{"tables":[
            {"name":"t","columns":[{"name":"a","type":"integer"},{"name":"b","type":"text"}],
             "rows":[[1,"x"],[5,"y"],[3,null]]},
            {"name":"u","columns":[{"name":"a","type":"integer"},{"name":"c","type":"float"}],
             "rows":[[1,0.5],[3,1.5],[3,2.5]]}]}"#,
            "test",
        )
        .unwrap()
    }

    fn run(sql: &str, d: Dialect) -> EngineResult<ResultTable> {
        run_sql(sql, &db(), &DialectMode::for_dialect(d))
    }

    fn ints(t: &ResultTable) -> Vec<Vec<i64>> {
        t.rows.iter().map(|r| r.iter().map(|v| if let Value::Int(i) = v { *i } else { -999 }).collect()).collect()
    }

    #[test]
    fn count_star() {
        assert_eq!(ints(&run("SELECT count(*) FROM t", Dialect::Sqlite).unwrap()), vec![vec![3]]);
    }

    #[test]
    fn order_desc_limit() {
        let r = run("SELECT a FROM t ORDER BY a DESC LIMIT 2", Dialect::Sqlite).unwrap();
        assert_eq!(ints(&r), vec![vec![5], vec![3]]);
    }

    #[test]
    fn join_group_having() {
        let r = run("SELECT t.a, count(*) AS n FROM t JOIN u ON t.a = u.a GROUP BY t.a HAVING count(*) > 1", Dialect::Mysql).unwrap();
        assert_eq!(ints(&r), vec![vec![3, 2]]);
    }

    #[test]
    fn left_join_pads_nulls() {
        let r = run("SELECT t.a, u.c FROM t LEFT JOIN u ON t.a = u.a AND u.c > 1 ORDER BY t.a", Dialect::Sqlite).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows[0][1].is_null());
    }

    #[test]
    fn strict_group_by_per_mode() {
        let sql = "SELECT b, count(*) FROM t";
        let e = run(sql, Dialect::Mysql).unwrap_err();
        assert_eq!(e.class, EngineErrorClass::StrictGroupBy);
        assert!(e.message.contains("expression #1 of SELECT list contains nonaggregated column 'test.t.b'"));
        assert!(run(sql, Dialect::Sqlite).is_ok());
        let lax = DialectMode::for_dialect(Dialect::Mysql).with_strict_group_by(false);
        assert!(run_sql(sql, &db(), &lax).is_ok());
    }

    #[test]
    fn aggregates_over_empty_input() {
        let r = run("SELECT count(*), sum(a), max(a) FROM t WHERE a > 100", Dialect::Postgres).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(0), Value::Null, Value::Null]]);
        let g = run("SELECT a, count(*) FROM t WHERE a > 100 GROUP BY a", Dialect::Postgres).unwrap();
        assert!(g.rows.is_empty());
    }

    #[test]
    fn integer_division_by_dialect() {
        assert_eq!(run("SELECT 7 / 2", Dialect::Sqlite).unwrap().rows[0][0], Value::Int(3));
        assert_eq!(run("SELECT 7 / 2", Dialect::Mysql).unwrap().rows[0][0], Value::Float(3.5));
        assert!(run("SELECT 1 / 0", Dialect::Sqlite).unwrap().rows[0][0].is_null());
        assert_eq!(run("SELECT 1 / 0", Dialect::Postgres).unwrap_err().class, EngineErrorClass::Runtime);
    }

    #[test]
    fn cast_of_non_numeric_text_is_type_mismatch_in_postgres() {
        let e = run("SELECT b::INTEGER FROM t", Dialect::Postgres).unwrap_err();
        assert_eq!(e.class, EngineErrorClass::TypeMismatch);
        let r = run("SELECT CAST(b AS INTEGER) FROM t", Dialect::Sqlite).unwrap();
        assert_eq!(r.rows[0][0], Value::Int(0));
    }

    #[test]
    fn text_number_comparison_strictness() {
        assert_eq!(run("SELECT b FROM t WHERE b = 1", Dialect::Postgres).unwrap_err().class, EngineErrorClass::TypeMismatch);
        assert!(run("SELECT a FROM t WHERE a = '1'", Dialect::Postgres).is_ok());
        assert!(run("SELECT b FROM t WHERE b = 1", Dialect::Sqlite).unwrap().rows.is_empty());
    }

    #[test]
    fn null_ordering_follows_dialect() {
        let s = run("SELECT b FROM t ORDER BY b", Dialect::Sqlite).unwrap();
        assert!(s.rows[0][0].is_null());
        let p = run("SELECT b FROM t ORDER BY b", Dialect::Postgres).unwrap();
        assert!(p.rows[2][0].is_null());
    }

    #[test]
    fn window_rank_and_filter_unsupported() {
        let r = run("SELECT a, rank() OVER (ORDER BY a DESC) FROM u ORDER BY a", Dialect::Postgres).unwrap();
        assert_eq!(ints(&r), vec![vec![1, 3], vec![3, 1], vec![3, 1]]);
        let e = run("SELECT count(*) FILTER (WHERE a > 1) FROM u", Dialect::Postgres).unwrap_err();
        assert_eq!(e.class, EngineErrorClass::UnsupportedFeature);
    }

    #[test]
    fn subqueries_and_ctes() {
        let r = run("SELECT a FROM t WHERE a IN (SELECT a FROM u) ORDER BY a", Dialect::Sqlite).unwrap();
        assert_eq!(ints(&r), vec![vec![1], vec![3]]);
        let r = run("WITH s AS (SELECT a FROM u WHERE c > 1) SELECT count(*) FROM s", Dialect::Sqlite).unwrap();
        assert_eq!(ints(&r), vec![vec![2]]);
        let r = run("SELECT t.a FROM t WHERE EXISTS (SELECT 1 FROM u WHERE u.a = t.a AND u.c > 2)", Dialect::Sqlite).unwrap();
        assert_eq!(ints(&r), vec![vec![3]]);
    }

    #[test]
    fn unknown_objects() {
        assert_eq!(run("SELECT * FROM nope", Dialect::Mysql).unwrap_err().class, EngineErrorClass::UnknownRelation);
        assert_eq!(run("SELECT zz FROM t", Dialect::Mysql).unwrap_err().class, EngineErrorClass::UnknownColumn);
        assert_eq!(run("SELECT a FROM t JOIN u ON t.a = u.a", Dialect::Sqlite).unwrap_err().class, EngineErrorClass::UnknownColumn);
    }

    #[test]
    fn mysql_table_names_are_case_sensitive() {
        assert!(run("SELECT a FROM T", Dialect::Mysql).is_err());
        assert!(run("SELECT a FROM T", Dialect::Sqlite).is_ok());
    }

    #[test]
    fn distinct_order_by_rule_in_postgres() {
        let sql = "SELECT DISTINCT b FROM t ORDER BY a";
        assert_eq!(run(sql, Dialect::Postgres).unwrap_err().class, EngineErrorClass::DialectViolation);
        assert!(run(sql, Dialect::Sqlite).is_ok());
    }

    #[test]
    fn like_matching() {
        assert!(like_match("January 16", "Jan%16", false));
        assert!(like_match("abc", "a_c", false));
        assert!(!like_match("abc", "A%", false));
        assert!(like_match("abc", "A%", true));
        assert!(like_match("", "%", false));
        assert!(!like_match("ab", "a", false));
    }

    #[test]
    fn deadline_in_the_past_aborts() {
        let opts = ExecOptions { deadline: Some(Instant::now()) };
        let q = parse_sql("SELECT * FROM t, u, t AS t2", &DialectMode::for_dialect(Dialect::Sqlite)).unwrap();
        let e = execute_with(&q, &db(), &DialectMode::for_dialect(Dialect::Sqlite), opts).unwrap_err();
        assert_eq!(e.class, EngineErrorClass::DeadlineExceeded);
    }
}
