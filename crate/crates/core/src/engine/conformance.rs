//! Static dialect checks and the golden conformance corpus.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::db::InMemoryDb;
use super::error::EngineErrorClass;
use super::exec::run_sql;
use super::mode::DialectMode;
use super::parser::{parse_collecting, Violation};
use crate::model::{Dialect, FormatError};

/// Every dialect violation in `sql`. Never executes anything. A query that
/// does not parse at all yields no violations; use `parse_sql` for that.
pub fn check_conformance(sql: &str, mode: &DialectMode) -> Vec<Violation> {
    match parse_collecting(sql, mode) {
        Ok((_, v)) => v,
        Err(_) => Vec::new(),
    }
}

/// One golden triple. `expected` is `accept` or an engine error class tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceCase {
    #[serde(default)]
    pub db: Option<String>,
    pub dialect: Dialect,
    pub expected: String,
    #[serde(default)]
    pub name: String,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseOutcome {
    pub name: String,
    pub expected: String,
    pub actual: String,
}

impl CaseOutcome {
    pub fn passed(&self) -> bool {
        self.expected == self.actual
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<ConformanceCase>, FormatError> {
    let cases: Vec<ConformanceCase> = crate::model::read_jsonl(path)?;
    for (i, c) in cases.iter().enumerate() {
        if c.expected != "accept" && EngineErrorClass::parse(&c.expected).is_none() {
            return Err(FormatError::AtLine {
                line: i + 1,
                source: Box::new(FormatError::InvalidField { field: "expected", reason: format!("unknown outcome '{}'", c.expected) }),
            });
        }
    }
    Ok(cases)
}

/// Runs one case: parse only when `db` is absent, parse and execute otherwise.
pub fn run_case(case: &ConformanceCase, lookup: &dyn Fn(&str) -> Option<InMemoryDb>) -> CaseOutcome {
    let mode = DialectMode::for_dialect(case.dialect);
    let actual = match &case.db {
        None => match super::parser::parse_sql(&case.sql, &mode) {
            Ok(_) => "accept".to_string(),
            Err(e) => e.class.as_str().to_string(),
        },
        Some(id) => match lookup(id) {
            None => format!("missing database {}", id),
            Some(db) => match run_sql(&case.sql, &db, &mode) {
                Ok(_) => "accept".to_string(),
                Err(e) => e.class.as_str().to_string(),
            },
        },
    };
    CaseOutcome { name: case.name.clone(), expected: case.expected.clone(), actual }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backquotes_in_postgres_is_one_violation() {
        let v = check_conformance("SELECT `name` FROM singer", &DialectMode::for_dialect(Dialect::Postgres));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].construct, "backquoted identifier");
        assert_eq!((v[0].start, v[0].end), (7, 13));
    }

    #[test]
    fn limit_in_oracle_is_one_violation() {
        let v = check_conformance("SELECT name FROM singer LIMIT 5", &DialectMode::for_dialect(Dialect::Oracle));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].construct, "LIMIT clause");
        assert_eq!(v[0].dialect, Dialect::Oracle);
    }

    #[test]
    fn conforming_sqlite_query_is_clean() {
        assert!(check_conformance("SELECT name FROM singer WHERE age > 20 LIMIT 3", &DialectMode::for_dialect(Dialect::Sqlite)).is_empty());
    }
}
