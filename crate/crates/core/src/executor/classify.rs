//! Maps raw backend error text to the shared error taxonomy.

use std::sync::LazyLock;

use regex::Regex;

use crate::model::{Dialect, ErrorClass};

type Table = Vec<(Regex, ErrorClass)>;

fn build(rows: &[(&str, ErrorClass)]) -> Table {
    rows.iter().map(|(p, c)| (Regex::new(&format!("(?i){}", p)).expect("static pattern"), *c)).collect()
}

// Checked before the per-dialect rows.
static COMMON: LazyLock<Table> = LazyLock::new(|| {
    build(&[(r"dialect violation", ErrorClass::DialectViolation), (r"exceeded its deadline|timed out|statement timeout", ErrorClass::Timeout)])
});

static MYSQL: LazyLock<Table> = LazyLock::new(|| {
    build(&[
        (r"Error 1140\b|Error 1055\b|only_full_group_by", ErrorClass::StrictGroupBy),
        (r"Error 3024\b|maximum statement execution time", ErrorClass::Timeout),
        (r"Error 1064\b|SQL syntax", ErrorClass::Syntax),
        (r"Error 1146\b|Error 1054\b|Error 1052\b|Error 1305\b|doesn't exist|Unknown column", ErrorClass::UnknownObject),
        (r"Error 1292\b|Error 1366\b|Truncated incorrect|Incorrect \w+ value", ErrorClass::Type),
    ])
});

static POSTGRES: LazyLock<Table> = LazyLock::new(|| {
    build(&[
        (r"must appear in the GROUP BY clause", ErrorClass::StrictGroupBy),
        (r"canceling statement due to statement timeout", ErrorClass::Timeout),
        (r"syntax error", ErrorClass::Syntax),
        (r"operator does not exist|invalid input syntax for|function \w+\([\w ]+\) does not exist|cannot be cast", ErrorClass::Type),
        (
            r#"relation "[^"]*" does not exist|column "[^"]*" does not exist|missing FROM-clause|is ambiguous|function \w+ does not exist"#,
            ErrorClass::UnknownObject,
        ),
    ])
});

static SQLITE: LazyLock<Table> = LazyLock::new(|| {
    build(&[
        (r"interrupted", ErrorClass::Timeout),
        (r"syntax error|unrecognized token|incomplete input", ErrorClass::Syntax),
        (r"no such table|no such column|ambiguous column name|no such function", ErrorClass::UnknownObject),
        (r"datatype mismatch", ErrorClass::Type),
    ])
});

static ORACLE: LazyLock<Table> = LazyLock::new(|| {
    build(&[
        (r"ORA-00937\b|ORA-00979\b", ErrorClass::StrictGroupBy),
        (r"ORA-01013\b", ErrorClass::Timeout),
        (r"ORA-00933\b|ORA-00923\b|ORA-00936\b|ORA-00907\b|ORA-00905\b", ErrorClass::Syntax),
        (r"ORA-00942\b|ORA-00904\b|ORA-00918\b", ErrorClass::UnknownObject),
        (r"ORA-01722\b|ORA-00932\b", ErrorClass::Type),
    ])
});

/// First matching pattern wins; unmatched text is a runtime error.
pub fn classify_error(raw: &str, dialect: Dialect) -> ErrorClass {
    let table: &Table = match dialect {
        Dialect::Mysql => &MYSQL,
        Dialect::Postgres => &POSTGRES,
        Dialect::Sqlite => &SQLITE,
        Dialect::Oracle => &ORACLE,
    };
    COMMON.iter().chain(table.iter()).find(|(re, _)| re.is_match(raw)).map(|(_, c)| *c).unwrap_or(ErrorClass::Runtime)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mysql_only_full_group_by() {
        let raw = "Error 1140 (42000): In aggregated query without GROUP BY, expression #2 of SELECT list contains \
                   nonaggregated column 'movie_platform.T2.director_name'; this is incompatible with sql_mode=only_full_group_by";
        assert_eq!(classify_error(raw, Dialect::Mysql), ErrorClass::StrictGroupBy);
    }

    #[test]
    fn postgres_undefined_table() {
        // server text for SQLSTATE 42P01
        let raw = "ERROR:  relation \"singers\" does not exist\nLINE 1: SELECT * FROM singers\n                      ^";
        assert_eq!(classify_error(raw, Dialect::Postgres), ErrorClass::UnknownObject);
    }

    #[test]
    fn fallback_is_runtime() {
        for d in crate::model::ALL_DIALECTS {
            assert_eq!(classify_error("qwxz blorp", d), ErrorClass::Runtime);
        }
    }

    #[test]
    fn postgres_type_errors_before_unknown_object() {
        assert_eq!(classify_error("ERROR: function sum(text) does not exist", Dialect::Postgres), ErrorClass::Type);
        assert_eq!(classify_error("ERROR: operator does not exist: text > integer", Dialect::Postgres), ErrorClass::Type);
    }
}
