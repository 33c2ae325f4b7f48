use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no SQL statement found in model output")]
pub struct ExtractError;

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[^\n`]*\n(.*?)```").unwrap());

// A WITH line only counts when it opens a CTE, so prose like "With the
// schema above..." is skipped.
static START: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(select\b|with\s+(recursive\s+)?[\w`\x22]+\s*(\([^);`]*\)\s*)?as\s*\()").unwrap());

/// The statement opening at the first SELECT/WITH line of `text`. It runs to
/// a semicolon outside quotes, a blank line, a fence, or the end.
fn statement(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let first = lines.iter().position(|l| START.is_match(l))?;
    let mut out = String::new();
    let mut quote: Option<char> = None;
    'lines: for (i, line) in lines[first..].iter().enumerate() {
        if i > 0 {
            if quote.is_none() && (line.trim().is_empty() || line.trim_start().starts_with("```")) {
                break;
            }
            out.push('\n');
        }
        let body = if i == 0 { line.trim_start() } else { line };
        for (pos, c) in body.char_indices() {
            match quote {
                Some(q) if c == q => quote = None,
                Some(_) => {}
                None if c == '\'' || c == '"' || c == '`' => quote = Some(c),
                None if c == ';' => break 'lines,
                None if body[pos..].starts_with("```") => break 'lines,
                None => {}
            }
            out.push(c);
        }
    }
    let s = out.trim().to_string();
    (!s.is_empty()).then_some(s)
}

/// Pulls one SQL statement out of raw model output. The last fenced code
/// block holding a statement wins, then the first statement line in the text.
pub fn extract_sql(raw: &str) -> Result<String, ExtractError> {
    let blocks: Vec<&str> = FENCE.captures_iter(raw).map(|c| c.get(1).unwrap().as_str()).collect();
    if let Some(s) = blocks.iter().rev().find_map(|b| statement(b)) {
        return Ok(s);
    }
    // A whole-text statement is covered here too: its first line opens it.
    if let Some(s) = statement(raw) {
        return Ok(s);
    }
    Err(ExtractError)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fenced_block() {
        assert_eq!(extract_sql("Here is the query:\n```sql\nSELECT 1\n```").unwrap(), "SELECT 1");
    }

    #[test]
    fn last_fence_wins() {
        let raw = "```sql\nSELECT 1\n```\nfixed:\n```sql\nSELECT 2;\n```";
        assert_eq!(extract_sql(raw).unwrap(), "SELECT 2");
    }

    #[test]
    fn repeated_question_then_statement() {
        let raw = "Question: How many singers are there?\nHow many singers are there?\nSELECT a FROM t;\nExplanation: ...";
        assert_eq!(extract_sql(raw).unwrap(), "SELECT a FROM t");
    }

    #[test]
    fn multi_line_until_blank() {
        let raw = "select a\n  from t\n  where b = 'x;y'\n\ntrailing words";
        assert_eq!(extract_sql(raw).unwrap(), "select a\n  from t\n  where b = 'x;y'");
    }

    #[test]
    fn cte_but_not_prose() {
        assert_eq!(extract_sql("With the tables given:\nWITH x AS (SELECT 1) SELECT * FROM x").unwrap(), "WITH x AS (SELECT 1) SELECT * FROM x");
    }

    #[test]
    fn no_sql() {
        assert_eq!(extract_sql("I cannot answer."), Err(ExtractError));
        assert_eq!(extract_sql("```\nnot sql\n```"), Err(ExtractError));
        assert_eq!(extract_sql(";"), Err(ExtractError));
    }

    fn noisy_output() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            Just("SELECT ".to_string()),
            Just("select".to_string()),
            Just("WITH w AS (".to_string()),
            Just("```sql\n".to_string()),
            Just("```".to_string()),
            Just("\n".to_string()),
            Just("\n\n".to_string()),
            Just(";".to_string()),
            Just("'".to_string()),
            Just("\"".to_string()),
            "[a-z0-9 ,.*=()]{0,8}",
        ];
        prop::collection::vec(piece, 0..14).prop_map(|v| v.concat())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn idempotent(raw in noisy_output()) {
            if let Ok(once) = extract_sql(&raw) {
                prop_assert_eq!(extract_sql(&once), Ok(once.clone()));
            }
        }
    }
}
