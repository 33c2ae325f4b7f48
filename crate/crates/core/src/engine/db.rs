//! In-memory databases loaded from JSON fixture files.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::value::{strict_number, ColumnType, Value};
use crate::model::{SchemaInfo, TableSchema};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed fixture: {0}")]
    Json(String),
    #[error("duplicate table name {0}")]
    DuplicateTable(String),
    #[error("table {table}: duplicate column {column}")]
    DuplicateColumn { table: String, column: String },
    #[error("table {table}: unknown column type '{ty}'")]
    UnknownType { table: String, ty: String },
    #[error("table {table}: row {row} has {got} cells, expected {expected}")]
    Arity { table: String, row: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

/// An immutable database. Safe to share across concurrent executions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InMemoryDb {
    pub db_id: String,
    pub tables: Vec<Table>,
    /// Rows dropped at load because a cell could not be read as its declared type.
    pub skipped_rows: usize,
}

#[derive(Deserialize)]
struct FixtureFile {
    #[serde(default)]
    db_id: Option<String>,
    tables: Vec<FixtureTable>,
}

#[derive(Deserialize)]
struct FixtureTable {
    name: String,
    columns: Vec<FixtureColumn>,
    #[serde(default)]
    rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Deserialize)]
struct FixtureColumn {
    name: String,
    #[serde(rename = "type")]
    ty: String,
}

/// Loads `path`; the database id is the file stem unless the file names one.
pub fn load_database(path: &Path) -> Result<InMemoryDb, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("db").to_string();
    parse_database(&text, &stem)
}

pub fn parse_database(text: &str, default_id: &str) -> Result<InMemoryDb, LoadError> {
    let f: FixtureFile = serde_json::from_str(text).map_err(|e| LoadError::Json(e.to_string()))?;
    let mut names = HashSet::new();
    let mut tables = Vec::with_capacity(f.tables.len());
    let mut skipped = 0;
    for t in f.tables {
        if !names.insert(t.name.to_ascii_lowercase()) {
            return Err(LoadError::DuplicateTable(t.name));
        }
        let mut cols = Vec::with_capacity(t.columns.len());
        let mut col_names = HashSet::new();
        for c in t.columns {
            let ty = ColumnType::parse(&c.ty).ok_or_else(|| LoadError::UnknownType { table: t.name.clone(), ty: c.ty.clone() })?;
            if !col_names.insert(c.name.to_ascii_lowercase()) {
                return Err(LoadError::DuplicateColumn { table: t.name.clone(), column: c.name });
            }
            cols.push(Column { name: c.name, ty });
        }
        let mut rows = Vec::with_capacity(t.rows.len());
        for (i, raw) in t.rows.into_iter().enumerate() {
            if raw.len() != cols.len() {
                return Err(LoadError::Arity { table: t.name.clone(), row: i, got: raw.len(), expected: cols.len() });
            }
            let cells: Option<Vec<Value>> = raw.iter().zip(&cols).map(|(v, c)| read_cell(v, c.ty)).collect();
            match cells {
                Some(r) => rows.push(r),
                None => skipped += 1,
            }
        }
        tables.push(Table { name: t.name, columns: cols, rows });
    }
    if skipped > 0 {
        log::info!("skipping {} rows with problematic data in {}", skipped, f.db_id.as_deref().unwrap_or(default_id));
    }
    Ok(InMemoryDb { db_id: f.db_id.unwrap_or_else(|| default_id.to_string()), tables, skipped_rows: skipped })
}

/// `None` marks a malformed cell (e.g. an empty string in a numeric column).
fn read_cell(v: &serde_json::Value, ty: ColumnType) -> Option<Value> {
    use serde_json::Value as J;
    match (v, ty) {
        (J::Null, _) => Some(Value::Null),
        (J::Number(n), ColumnType::Integer) => n.as_i64().map(Value::Int),
        (J::Number(n), ColumnType::Float) => n.as_f64().map(Value::Float),
        (J::Number(n), ColumnType::Text) => Some(Value::Text(n.to_string())),
        (J::String(s), ColumnType::Integer) => match strict_number(s)? {
            Value::Int(i) => Some(Value::Int(i)),
            _ => None,
        },
        (J::String(s), ColumnType::Float) => strict_number(s)?.as_f64().map(Value::Float),
        (J::String(s), ColumnType::Text | ColumnType::Date) => Some(Value::Text(s.clone())),
        _ => None,
    }
}

impl InMemoryDb {
    pub fn table(&self, name: &str, case_sensitive: bool) -> Option<&Table> {
        self.tables.iter().find(|t| if case_sensitive { t.name == name } else { t.name.eq_ignore_ascii_case(name) })
    }

    /// (tables, columns across all tables, rows across all tables)
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.tables.len(), self.tables.iter().map(|t| t.columns.len()).sum(), self.tables.iter().map(|t| t.rows.len()).sum())
    }

    pub fn schema_info(&self) -> SchemaInfo {
        SchemaInfo {
            tables: self
                .tables
                .iter()
                .map(|t| TableSchema {
                    name: t.name.clone(),
                    columns: t.columns.iter().map(|c| (c.name.clone(), c.ty.as_str().to_string())).collect(),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tables.iter().all(|t| t.rows.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"tables":[{"name":"t","columns":[{"name":"a","type":"integer"},{"name":"b","type":"text"}],
        "rows":[[1,"x"],[2,"y"],[3,null]]}]}"#;

    #[test]
    fn counts_match_fixture() {
        let db = parse_database(ONE, "one").unwrap();
        assert_eq!(db.counts(), (1, 2, 3));
        assert_eq!(db.db_id, "one");
    }

    #[test]
    fn arity_error_names_table_and_row() {
        let bad = r#"{"tables":[{"name":"t","columns":[{"name":"a","type":"integer"}],"rows":[[1],[2,3]]}]}"#;
        let e = parse_database(bad, "x").unwrap_err();
        assert_eq!(e.to_string(), "table t: row 1 has 2 cells, expected 1");
    }

    #[test]
    fn duplicate_table_and_unknown_type() {
        let dup = r#"{"tables":[{"name":"t","columns":[]},{"name":"T","columns":[]}]}"#;
        assert!(matches!(parse_database(dup, "x"), Err(LoadError::DuplicateTable(_))));
        let ty = r#"{"tables":[{"name":"t","columns":[{"name":"a","type":"blob"}]}]}"#;
        assert!(matches!(parse_database(ty, "x"), Err(LoadError::UnknownType { .. })));
    }

    #[test]
    fn malformed_numeric_cells_skip_the_row() {
        let f = r#"{"tables":[{"name":"t","columns":[{"name":"a","type":"integer"}],"rows":[[1],[""],["7"],["x"]]}]}"#;
        let db = parse_database(f, "x").unwrap();
        assert_eq!(db.skipped_rows, 2);
        assert_eq!(db.tables[0].rows, vec![vec![Value::Int(1)], vec![Value::Int(7)]]);
    }

    #[test]
    fn empty_database() {
        let db = parse_database(r#"{"tables":[]}"#, "empty").unwrap();
        assert_eq!(db.counts(), (0, 0, 0));
    }
}
