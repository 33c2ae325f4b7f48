use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Integer,
    Float,
    Text,
    Date,
}

impl ColumnType {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "integer" => Some(ColumnType::Integer),
            "float" => Some(ColumnType::Float),
            "text" => Some(ColumnType::Text),
            "date" => Some(ColumnType::Date),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Integer => "integer",
            ColumnType::Float => "float",
            ColumnType::Text => "text",
            ColumnType::Date => "date",
        }
    }
}

/// A single SQL cell. Dates are ISO-8601 text.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "unknown",
            Value::Int(_) => "integer",
            Value::Float(_) => "double precision",
            Value::Text(_) => "text",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Rendering used for text conversion and CLI output.
    pub fn render(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format_float(*f),
            Value::Text(s) => s.clone(),
        }
    }

    /// Total order used for sorting, grouping and DISTINCT: NULL < numbers < text.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Null, _) => Ordering::Less,
            (_, Null) => Ordering::Greater,
            (Int(a), Int(b)) => a.cmp(b),
            (Int(_) | Float(_), Int(_) | Float(_)) => self.as_f64().unwrap().total_cmp(&other.as_f64().unwrap()),
            (Int(_) | Float(_), Text(_)) => Ordering::Less,
            (Text(_), Int(_) | Float(_)) => Ordering::Greater,
            (Text(a), Text(b)) => a.cmp(b),
        }
    }
}

pub fn format_float(f: f64) -> String {
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 1e15 {
        format!("{:.1}", f)
    } else {
        format!("{}", f)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Structural equality: Int(1) and Float(1.0) are equal; NULL equals NULL.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.total_cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Null => 0u8.hash(state),
            Value::Int(i) => hash_number(*i as f64, state),
            Value::Float(f) => hash_number(*f, state),
            Value::Text(s) => {
                2u8.hash(state);
                s.hash(state)
            }
        }
    }
}

fn hash_number<H: Hasher>(f: f64, state: &mut H) {
    1u8.hash(state);
    // -0.0 and 0.0 compare equal
    let f = if f == 0.0 { 0.0 } else { f };
    f.to_bits().hash(state);
}

/// Parses the longest numeric prefix, the way SQLite and MySQL coerce text.
pub fn lenient_number(s: &str) -> Value {
    let t = s.trim();
    if let Ok(i) = t.parse::<i64>() {
        return Value::Int(i);
    }
    if let Ok(f) = t.parse::<f64>() {
        if f.is_finite() {
            return Value::Float(f);
        }
    }
    let bytes = t.as_bytes();
    let mut end = 0;
    let mut seen_dot = false;
    let mut seen_digit = false;
    for (i, b) in bytes.iter().enumerate() {
        match b {
            b'+' | b'-' if i == 0 => {}
            b'0'..=b'9' => seen_digit = true,
            b'.' if !seen_dot => seen_dot = true,
            _ => break,
        }
        end = i + 1;
    }
    if !seen_digit {
        return Value::Int(0);
    }
    let prefix = &t[..end];
    prefix.parse::<i64>().map(Value::Int).or_else(|_| prefix.trim_end_matches('.').parse::<f64>().map(Value::Float)).unwrap_or(Value::Int(0))
}

/// Strict numeric parse: the whole trimmed text must be a number.
pub fn strict_number(s: &str) -> Option<Value> {
    let t = s.trim();
    if let Ok(i) = t.parse::<i64>() {
        return Some(Value::Int(i));
    }
    match t.parse::<f64>() {
        Ok(f) if f.is_finite() && !t.is_empty() && !t.eq_ignore_ascii_case("nan") => Some(Value::Float(f)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_equality_across_types() {
        assert_eq!(Value::Int(1), Value::Float(1.0));
        assert_ne!(Value::Int(1), Value::Text("1".into()));
        assert_eq!(Value::Null, Value::Null);
    }

    #[test]
    fn lenient_prefix() {
        assert_eq!(lenient_number("12abc"), Value::Int(12));
        assert_eq!(lenient_number("3.5 kg"), Value::Float(3.5));
        assert_eq!(lenient_number("abc"), Value::Int(0));
        assert_eq!(lenient_number(""), Value::Int(0));
    }

    #[test]
    fn strict_rejects_partial() {
        assert!(strict_number("12abc").is_none());
        assert!(strict_number("").is_none());
        assert_eq!(strict_number(" 24 "), Some(Value::Int(24)));
        assert_eq!(strict_number("2.5"), Some(Value::Float(2.5)));
    }
}
