use serde::{Deserialize, Serialize};

use crate::model::Dialect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentifierQuote {
    Backquote,
    DoubleQuote,
}

impl IdentifierQuote {
    pub fn char(self) -> char {
        match self {
            IdentifierQuote::Backquote => '`',
            IdentifierQuote::DoubleQuote => '"',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitStyle {
    Limit,
    FetchFirst,
}

/// Per-dialect grammar and execution switches.
///
/// `for_dialect` gives the engine defaults; individual switches can be
/// overridden afterwards (e.g. turning off strict GROUP BY to mirror a MySQL
/// server running without `only_full_group_by`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialectMode {
    pub dialect: Dialect,
    pub strict_group_by: bool,
    pub allow_double_colon_cast: bool,
    pub allow_ilike: bool,
    pub identifier_quote: IdentifierQuote,
    pub limit_style: LimitStyle,
    /// Table names and aliases compare case-sensitively.
    pub case_sensitive_tables: bool,
    /// Comparing or computing on text against numbers is an error rather
    /// than an implicit conversion.
    pub strict_types: bool,
}

impl DialectMode {
    pub fn for_dialect(dialect: Dialect) -> Self {
        match dialect {
            Dialect::Sqlite => DialectMode {
                dialect,
                strict_group_by: false,
                allow_double_colon_cast: false,
                allow_ilike: false,
                identifier_quote: IdentifierQuote::DoubleQuote,
                limit_style: LimitStyle::Limit,
                case_sensitive_tables: false,
                strict_types: false,
            },
            Dialect::Postgres => DialectMode {
                dialect,
                strict_group_by: true,
                allow_double_colon_cast: true,
                allow_ilike: true,
                identifier_quote: IdentifierQuote::DoubleQuote,
                limit_style: LimitStyle::Limit,
                case_sensitive_tables: false,
                strict_types: true,
            },
            Dialect::Mysql => DialectMode {
                dialect,
                strict_group_by: true,
                allow_double_colon_cast: false,
                allow_ilike: false,
                identifier_quote: IdentifierQuote::Backquote,
                limit_style: LimitStyle::Limit,
                case_sensitive_tables: true,
                strict_types: false,
            },
            Dialect::Oracle => DialectMode {
                dialect,
                strict_group_by: true,
                allow_double_colon_cast: false,
                allow_ilike: false,
                identifier_quote: IdentifierQuote::DoubleQuote,
                limit_style: LimitStyle::FetchFirst,
                case_sensitive_tables: false,
                strict_types: true,
            },
        }
    }

    pub fn with_strict_group_by(mut self, on: bool) -> Self {
        self.strict_group_by = on;
        self
    }

    pub fn names_equal(&self, a: &str, b: &str) -> bool {
        if self.case_sensitive_tables {
            a == b
        } else {
            a.eq_ignore_ascii_case(b)
        }
    }

    /// LIKE without the I: case-insensitive in SQLite and MySQL (default collation).
    pub fn like_case_insensitive(&self) -> bool {
        matches!(self.dialect, Dialect::Sqlite | Dialect::Mysql)
    }

    /// Integer division truncates in SQLite and PostgreSQL.
    pub fn integer_division(&self) -> bool {
        matches!(self.dialect, Dialect::Sqlite | Dialect::Postgres)
    }

    pub fn nulls_sort_first(&self) -> bool {
        matches!(self.dialect, Dialect::Sqlite | Dialect::Mysql)
    }
}

impl From<Dialect> for DialectMode {
    fn from(d: Dialect) -> Self {
        DialectMode::for_dialect(d)
    }
}
