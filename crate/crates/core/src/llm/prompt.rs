use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use thiserror::Error;

use crate::engine::InMemoryDb;
use crate::model::{Dialect, SchemaInfo};

pub const TEMPLATE_NAMES: [&str; 5] = ["translate_postgres", "translate_mysql", "translate_oracle", "question_gen", "text2sql"];

const BUILTIN: [(&str, &str); 5] = [
    ("translate_postgres", include_str!("../../templates/translate_postgres.txt")),
    ("translate_mysql", include_str!("../../templates/translate_mysql.txt")),
    ("translate_oracle", include_str!("../../templates/translate_oracle.txt")),
    ("question_gen", include_str!("../../templates/question_gen.txt")),
    ("text2sql", include_str!("../../templates/text2sql.txt")),
];

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{(\w+)\}\}").unwrap());

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no translation template for {0}")]
    NoTemplate(Dialect),
    #[error("template {template} uses unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("database {0} has no rows to sample")]
    EmptyDatabase(String),
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Prompt templates by name. Starts from the bundled set; a directory can
/// override any of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    map: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Templates::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Templates { map: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    /// Bundled templates overridden by `<dir>/<name>.txt` where present.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Templates::builtin();
        for name in TEMPLATE_NAMES {
            let p = dir.join(format!("{}.txt", name));
            if p.is_file() {
                let text = std::fs::read_to_string(&p).map_err(|e| PromptError::Io { path: p.display().to_string(), reason: e.to_string() })?;
                t.map.insert(name.to_string(), text);
            }
        }
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.map.get(name).map(String::as_str)
    }

    /// Joined text of every template, for config digests.
    pub fn fingerprint(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{}\n{}", k, v)).collect::<Vec<_>>().join("\n\u{0}")
    }

    /// Single pass, so substituted text is never itself expanded.
    fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let tpl = self.get(name).ok_or_else(|| PromptError::UnknownPlaceholder { template: name.to_string(), name: String::new() })?;
        let mut missing = None;
        let out = PLACEHOLDER.replace_all(tpl, |c: &Captures| match vars.iter().find(|(k, _)| *k == &c[1]) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.get_or_insert_with(|| c[1].to_string());
                String::new()
            }
        });
        match missing {
            Some(name_) => Err(PromptError::UnknownPlaceholder { template: name.to_string(), name: name_ }),
            None => Ok(out.into_owned()),
        }
    }
}

/// One line per table: `name(col TYPE, ...)`.
pub fn schema_text(schema: &SchemaInfo) -> String {
    schema
        .tables
        .iter()
        .map(|t| {
            let cols: Vec<String> = t.columns.iter().map(|(c, ty)| format!("{} {}", c, ty.to_uppercase())).collect();
            format!("{}({})", t.name, cols.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn feedback_text(target: Dialect, prior: &[(String, String)]) -> String {
    if prior.is_empty() {
        return String::new();
    }
    let mut s = format!("\nYour earlier conversions failed when executed on {}. Fix these errors:\n", target.display_name());
    for (i, (sql, err)) in prior.iter().enumerate() {
        s.push_str(&format!("Attempt {}:\n{}\nError: {}\n", i + 1, sql, err));
    }
    s
}

pub fn render_translation_prompt(
    templates: &Templates,
    source_sql: &str,
    question: &str,
    schema: &SchemaInfo,
    db_id: &str,
    target: Dialect,
    prior_errors: &[(String, String)],
) -> Result<String, PromptError> {
    let name = match target {
        Dialect::Postgres => "translate_postgres",
        Dialect::Mysql => "translate_mysql",
        Dialect::Oracle => "translate_oracle",
        Dialect::Sqlite => return Err(PromptError::NoTemplate(target)),
    };
    let tpl = templates.get(name).ok_or(PromptError::NoTemplate(target))?;
    let feedback = feedback_text(target, prior_errors);
    let schema = schema_text(schema);
    let vars = [("source_sql", source_sql), ("question", question), ("schema", schema.as_str()), ("db_id", db_id), ("feedback", feedback.as_str())];
    let out = templates.render(name, &vars)?;
    if !tpl.contains("{{feedback}}") && !feedback.is_empty() {
        return Ok(out + &feedback);
    }
    Ok(out)
}

/// Embeds the schema and up to `rows_per_table` rows of every table.
pub fn render_question_gen_prompt(templates: &Templates, db: &InMemoryDb, k: usize, rows_per_table: usize) -> Result<String, PromptError> {
    if db.is_empty() {
        return Err(PromptError::EmptyDatabase(db.db_id.clone()));
    }
    let mut rows = String::new();
    for t in db.tables.iter().filter(|t| !t.rows.is_empty()) {
        let header: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
        rows.push_str(&format!("{}:\n{}\n", t.name, header.join("\t")));
        for r in t.rows.iter().take(rows_per_table) {
            let cells: Vec<String> = r.iter().map(|v| v.render()).collect();
            rows.push_str(&cells.join("\t"));
            rows.push('\n');
        }
    }
    let schema = schema_text(&db.schema_info());
    let k = k.to_string();
    templates.render("question_gen", &[("db_id", db.db_id.as_str()), ("k", k.as_str()), ("schema", schema.as_str()), ("rows", rows.trim_end())])
}

/// `name: col, col.` per table, on one line.
pub fn columns_text(schema: &SchemaInfo) -> String {
    schema
        .tables
        .iter()
        .map(|t| {
            let cols: Vec<&str> = t.columns.iter().map(|(c, _)| c.as_str()).collect();
            format!("{}: {}.", t.name, cols.join(", "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_text2sql_prompt(
    templates: &Templates,
    question: &str,
    schema: &SchemaInfo,
    db_id: &str,
    dialect: Dialect,
) -> Result<String, PromptError> {
    let schema_lines = schema_text(schema);
    let tables = columns_text(schema);
    templates.render(
        "text2sql",
        &[
            ("dialect", dialect.display_name()),
            ("db_id", db_id),
            ("schema", schema_lines.as_str()),
            ("tables", tables.as_str()),
            ("question", question),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::parse_database;

    fn db(rows: usize) -> InMemoryDb {
        let rows: Vec<String> = (0..rows).map(|i| format!("[{}, \"n{}\"]", i, i)).collect();
        parse_database(
            &format!(
                r#"{{"tables":[{{"name":"t","columns":[{{"name":"id","type":"integer"}},{{"name":"name","type":"text"}}],"rows":[{}]}}]}}"#,
                rows.join(",")
            ),
            "d",
        )
        .unwrap()
    }

    #[test]
    fn postgres_and_mysql_rules_present() {
        let t = Templates::builtin();
        let s = SchemaInfo::default();
        let pg = render_translation_prompt(&t, "SELECT 1", "q", &s, "d", Dialect::Postgres, &[]).unwrap();
        assert!(pg.contains("add the table name before each column"));
        assert!(!pg.contains("{{"));
        let my = render_translation_prompt(&t, "SELECT 1", "q", &s, "d", Dialect::Mysql, &[]).unwrap();
        assert!(my.contains("Use backquotes for table name"));
        assert!(render_translation_prompt(&t, "SELECT 1", "q", &s, "d", Dialect::Sqlite, &[]).is_err());
    }

    #[test]
    fn prior_error_appears_once() {
        let t = Templates::builtin();
        let err = "Error 1140 (42000): something specific".to_string();
        for d in [Dialect::Postgres, Dialect::Mysql, Dialect::Oracle] {
            let p =
                render_translation_prompt(&t, "SELECT a FROM t", "q", &SchemaInfo::default(), "d", d, &[("SELECT b".into(), err.clone())]).unwrap();
            assert_eq!(p.matches(err.as_str()).count(), 1);
        }
    }

    #[test]
    fn substituted_text_is_not_expanded() {
        let t = Templates::builtin();
        let p = render_translation_prompt(&t, "SELECT '{{schema}}'", "q", &SchemaInfo::default(), "d", Dialect::Postgres, &[]).unwrap();
        assert!(p.contains("SELECT '{{schema}}'"));
    }

    #[test]
    fn question_gen_row_cap() {
        let t = Templates::builtin();
        let data_rows = |p: &str| p.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit()) && l.contains("\tn")).count();
        assert_eq!(data_rows(&render_question_gen_prompt(&t, &db(3), 5, 5).unwrap()), 3);
        assert_eq!(data_rows(&render_question_gen_prompt(&t, &db(10), 5, 5).unwrap()), 5);
        assert_eq!(render_question_gen_prompt(&t, &db(0), 5, 5), Err(PromptError::EmptyDatabase("d".into())));
    }

    #[test]
    fn rendering_is_pure() {
        let t = Templates::builtin();
        let a = render_text2sql_prompt(&t, "How many?", &db(1).schema_info(), "d", Dialect::Oracle).unwrap();
        assert_eq!(a, render_text2sql_prompt(&t, "How many?", &db(1).schema_info(), "d", Dialect::Oracle).unwrap());
        assert!(a.contains("t: id, name."));
    }
}
