use std::fmt;

use serde::{Deserialize, Serialize};

use super::mode::DialectMode;
use crate::model::Dialect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineErrorClass {
    Parse,
    UnknownRelation,
    UnknownColumn,
    TypeMismatch,
    StrictGroupBy,
    DialectViolation,
    UnsupportedFeature,
    Runtime,
    DeadlineExceeded,
}

impl EngineErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineErrorClass::Parse => "parse",
            EngineErrorClass::UnknownRelation => "unknown-relation",
            EngineErrorClass::UnknownColumn => "unknown-column",
            EngineErrorClass::TypeMismatch => "type-mismatch",
            EngineErrorClass::StrictGroupBy => "strict-group-by",
            EngineErrorClass::DialectViolation => "dialect-violation",
            EngineErrorClass::UnsupportedFeature => "unsupported-feature",
            EngineErrorClass::Runtime => "runtime",
            EngineErrorClass::DeadlineExceeded => "deadline-exceeded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        use EngineErrorClass::*;
        [Parse, UnknownRelation, UnknownColumn, TypeMismatch, StrictGroupBy, DialectViolation, UnsupportedFeature, Runtime, DeadlineExceeded]
            .into_iter()
            .find(|c| c.as_str() == s)
    }
}

impl fmt::Display for EngineErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An engine failure. `message` is worded the way the corresponding server
/// would word it, so downstream prompts see realistic feedback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineError {
    pub class: EngineErrorClass,
    pub message: String,
    pub position: Option<usize>,
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for EngineError {}

pub type EngineResult<T> = Result<T, EngineError>;

impl EngineError {
    pub fn new(class: EngineErrorClass, message: impl Into<String>) -> Self {
        EngineError { class, message: message.into(), position: None }
    }

    pub fn at(mut self, pos: usize) -> Self {
        self.position = Some(pos);
        self
    }

    pub fn syntax(mode: &DialectMode, near: &str, pos: usize, detail: &str) -> Self {
        let near_short: String = near.chars().take(40).collect();
        let msg = match mode.dialect {
            Dialect::Mysql => format!(
                "Error 1064 (42000): You have an error in your SQL syntax; check the manual that corresponds to your MySQL server version for the right syntax to use near '{}' at line 1 ({})",
                near_short, detail
            ),
            Dialect::Postgres => format!("ERROR: syntax error at or near \"{}\" ({}) at position {}", near_short, detail, pos),
            Dialect::Sqlite => format!("near \"{}\": syntax error ({})", near_short, detail),
            Dialect::Oracle => format!("ORA-00933: SQL command not properly ended near \"{}\" ({})", near_short, detail),
        };
        EngineError::new(EngineErrorClass::Parse, msg).at(pos)
    }

    pub fn dialect_violation(mode: &DialectMode, construct: &str, hint: &str, pos: usize) -> Self {
        let body = format!("dialect violation: {} is not supported in {}; {}", construct, mode.dialect.display_name(), hint);
        let msg = match mode.dialect {
            Dialect::Mysql => format!("Error 1064 (42000): {}", body),
            Dialect::Postgres => format!("ERROR: {}", body),
            Dialect::Sqlite => body,
            Dialect::Oracle => format!("ORA-00933: {}", body),
        };
        EngineError::new(EngineErrorClass::DialectViolation, msg).at(pos)
    }

    pub fn unknown_relation(mode: &DialectMode, db_id: &str, name: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Mysql => format!("Error 1146 (42S02): Table '{}.{}' doesn't exist", db_id, name),
            Dialect::Postgres => format!("ERROR: relation \"{}\" does not exist", name.to_lowercase()),
            Dialect::Sqlite => format!("no such table: {}", name),
            Dialect::Oracle => format!("ORA-00942: table or view does not exist: {}", name.to_uppercase()),
        };
        EngineError::new(EngineErrorClass::UnknownRelation, msg)
    }

    pub fn unknown_column(mode: &DialectMode, qualified: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Mysql => format!("Error 1054 (42S22): Unknown column '{}' in 'field list'", qualified),
            Dialect::Postgres => format!("ERROR: column \"{}\" does not exist", qualified.to_lowercase()),
            Dialect::Sqlite => format!("no such column: {}", qualified),
            Dialect::Oracle => format!("ORA-00904: \"{}\": invalid identifier", qualified.to_uppercase()),
        };
        EngineError::new(EngineErrorClass::UnknownColumn, msg)
    }

    pub fn ambiguous_column(mode: &DialectMode, name: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Mysql => format!("Error 1052 (23000): Column '{}' in field list is ambiguous", name),
            Dialect::Postgres => format!("ERROR: column reference \"{}\" is ambiguous", name.to_lowercase()),
            Dialect::Sqlite => format!("ambiguous column name: {}", name),
            Dialect::Oracle => "ORA-00918: column ambiguously defined".to_string(),
        };
        EngineError::new(EngineErrorClass::UnknownColumn, msg)
    }

    /// `item_no` is 1-based, matching MySQL's "expression #N" wording.
    pub fn strict_group_by(mode: &DialectMode, db_id: &str, column: &str, item_no: usize, has_group_by: bool) -> Self {
        let msg = match (mode.dialect, has_group_by) {
            (Dialect::Mysql, false) => format!(
                "Error 1140 (42000): In aggregated query without GROUP BY, expression #{} of SELECT list contains nonaggregated column '{}.{}'; this is incompatible with sql_mode=only_full_group_by",
                item_no, db_id, column
            ),
            (Dialect::Mysql, true) => format!(
                "Error 1055 (42000): Expression #{} of SELECT list is not in GROUP BY clause and contains nonaggregated column '{}.{}' which is not functionally dependent on columns in GROUP BY clause; this is incompatible with sql_mode=only_full_group_by",
                item_no, db_id, column
            ),
            (Dialect::Oracle, false) => "ORA-00937: not a single-group group function".to_string(),
            (Dialect::Oracle, true) => "ORA-00979: not a GROUP BY expression".to_string(),
            _ => format!(
                "ERROR: column \"{}\" must appear in the GROUP BY clause or be used in an aggregate function",
                column.to_lowercase()
            ),
        };
        EngineError::new(EngineErrorClass::StrictGroupBy, msg)
    }

    pub fn invalid_input(mode: &DialectMode, target: &str, text: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Oracle => format!("ORA-01722: invalid number: '{}'", text),
            Dialect::Mysql => format!("Error 1292 (22007): Truncated incorrect {} value: '{}'", target.to_uppercase(), text),
            _ => format!("ERROR: invalid input syntax for type {}: \"{}\"", target, text),
        };
        EngineError::new(EngineErrorClass::TypeMismatch, msg)
    }

    pub fn operator_mismatch(mode: &DialectMode, op: &str, left: &str, right: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Oracle => format!("ORA-00932: inconsistent datatypes: expected {} got {}", left.to_uppercase(), right.to_uppercase()),
            _ => format!("ERROR: operator does not exist: {} {} {}", left, op, right),
        };
        EngineError::new(EngineErrorClass::TypeMismatch, msg)
    }

    /// A known function applied to an argument type it has no overload for.
    pub fn undefined_function(mode: &DialectMode, name: &str, arg_type: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Oracle => format!("ORA-00932: inconsistent datatypes: expected NUMBER got {}", arg_type.to_uppercase()),
            _ => format!("ERROR: function {}({}) does not exist", name, arg_type),
        };
        EngineError::new(EngineErrorClass::TypeMismatch, msg)
    }

    pub fn unknown_function(mode: &DialectMode, name: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Mysql => format!("Error 1305 (42000): FUNCTION {} does not exist", name),
            Dialect::Postgres => format!("ERROR: function {} does not exist", name),
            Dialect::Sqlite => format!("no such function: {}", name),
            Dialect::Oracle => format!("ORA-00904: \"{}\": invalid identifier", name.to_uppercase()),
        };
        EngineError::new(EngineErrorClass::UnsupportedFeature, msg)
    }

    pub fn unsupported(feature: &str) -> Self {
        EngineError::new(EngineErrorClass::UnsupportedFeature, format!("unsupported feature: {}", feature))
    }

    pub fn runtime(mode: &DialectMode, what: &str) -> Self {
        let msg = match mode.dialect {
            Dialect::Mysql => format!("Error 1105 (HY000): {}", what),
            Dialect::Postgres => format!("ERROR: {}", what),
            Dialect::Sqlite => what.to_string(),
            Dialect::Oracle => format!("ORA-20001: {}", what),
        };
        EngineError::new(EngineErrorClass::Runtime, msg)
    }

    pub fn deadline() -> Self {
        EngineError::new(EngineErrorClass::DeadlineExceeded, "query execution exceeded its deadline")
    }
}
