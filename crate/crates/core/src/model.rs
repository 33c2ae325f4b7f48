//! Shared data model and the line-oriented record format used by every stage.
//!
//! Records are persisted one JSON object per line with keys in alphabetical
//! order, so that two runs producing the same data produce the same bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed record: {0}")]
    Json(String),
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("invalid field {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<FormatError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four SQL dialects the pipeline targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Sqlite,
    Postgres,
    Mysql,
    Oracle,
}

pub const ALL_DIALECTS: [Dialect; 4] = [Dialect::Sqlite, Dialect::Postgres, Dialect::Mysql, Dialect::Oracle];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsupported dialect '{0}' (valid: sqlite, postgres, mysql, oracle)")]
pub struct UnknownDialect(pub String);

impl Dialect {
    pub fn tag(self) -> &'static str {
        match self {
            Dialect::Sqlite => "sqlite",
            Dialect::Postgres => "postgres",
            Dialect::Mysql => "mysql",
            Dialect::Oracle => "oracle",
        }
    }

    /// Human-facing engine name, as used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Dialect::Sqlite => "SQLite",
            Dialect::Postgres => "PostgreSQL",
            Dialect::Mysql => "MySQL",
            Dialect::Oracle => "Oracle",
        }
    }
}

/// Case-insensitive; accepts the engine display names as well as the tags.
pub fn parse_dialect(tag: &str) -> Result<Dialect, UnknownDialect> {
    match tag.trim().to_ascii_lowercase().as_str() {
        "sqlite" => Ok(Dialect::Sqlite),
        "postgres" | "postgresql" => Ok(Dialect::Postgres),
        "mysql" => Ok(Dialect::Mysql),
        "oracle" => Ok(Dialect::Oracle),
        _ => Err(UnknownDialect(tag.to_string())),
    }
}

impl FromStr for Dialect {
    type Err = UnknownDialect;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_dialect(s)
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionSource {
    Seed,
    ExistingDataset,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NLQuestion {
    pub id: String,
    pub text: String,
    pub db_id: String,
    pub source: QuestionSource,
    /// Set when the question quotes a literal cell value from its database.
    #[serde(default)]
    pub value_grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaInfo {
    pub tables: Vec<TableSchema>,
}

impl SchemaInfo {
    pub fn validate(&self) -> Result<(), FormatError> {
        let mut tables = HashSet::new();
        for t in &self.tables {
            if !tables.insert(t.name.as_str()) {
                return Err(FormatError::InvalidField { field: "tables", reason: format!("duplicate table {}", t.name) });
            }
            let mut cols = HashSet::new();
            for (c, _) in &t.columns {
                if !cols.insert(c.as_str()) {
                    return Err(FormatError::InvalidField { field: "columns", reason: format!("duplicate column {}.{}", t.name, c) });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Untested,
    Valid,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Translated,
    Sampled,
    Augmented,
    Manual,
}

macro_rules! tag_enum_fromstr {
    ($ty:ty, $field:literal, { $($s:literal => $v:path),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($v => $s,)+ }
            }
            fn from_tag(s: &str) -> Result<Self, FormatError> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(FormatError::InvalidField {
                        field: $field,
                        reason: format!("unknown value '{}'", other),
                    }),
                }
            }
        }
    };
}

tag_enum_fromstr!(RecordStatus, "status", {
    "untested" => RecordStatus::Untested,
    "valid" => RecordStatus::Valid,
    "invalid" => RecordStatus::Invalid,
});

tag_enum_fromstr!(Provenance, "provenance", {
    "translated" => Provenance::Translated,
    "sampled" => Provenance::Sampled,
    "augmented" => Provenance::Augmented,
    "manual" => Provenance::Manual,
});

/// One (question, dialect SQL, database) unit flowing through the pipeline.
///
/// Field declaration order is alphabetical; serialization relies on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetRecord {
    pub db_id: String,
    pub dialect: Dialect,
    pub id: String,
    pub provenance: Provenance,
    pub question: String,
    pub question_id: String,
    pub round: u32,
    pub sql: String,
    pub status: RecordStatus,
}

fn take_str(obj: &Map<String, Value>, field: &'static str) -> Result<String, FormatError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(FormatError::MissingField(field)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(FormatError::InvalidField { field, reason: format!("expected string, got {}", other) }),
    }
}

fn take_opt_str(obj: &Map<String, Value>, field: &'static str) -> Result<Option<String>, FormatError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(_) => take_str(obj, field).map(Some),
    }
}

fn take_round(obj: &Map<String, Value>) -> Result<u32, FormatError> {
    let Some(v) = obj.get("round") else {
        return Ok(0);
    };
    let n = v.as_i64().ok_or_else(|| FormatError::InvalidField { field: "round", reason: format!("expected integer, got {}", v) })?;
    if n < 0 {
        return Err(FormatError::InvalidField { field: "round", reason: format!("must be >= 0, got {}", n) });
    }
    u32::try_from(n).map_err(|_| FormatError::InvalidField { field: "round", reason: format!("out of range: {}", n) })
}

fn parse_object(line: &str) -> Result<Map<String, Value>, FormatError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(FormatError::Json("expected a JSON object".into())),
        Err(e) => Err(FormatError::Json(e.to_string())),
    }
}

fn dialect_field(obj: &Map<String, Value>) -> Result<Dialect, FormatError> {
    let tag = take_str(obj, "dialect")?;
    parse_dialect(&tag).map_err(|e| FormatError::InvalidField { field: "dialect", reason: e.to_string() })
}

pub fn parse_record(line: &str) -> Result<DatasetRecord, FormatError> {
    record_from_object(&parse_object(line)?)
}

impl<'de> Deserialize<'de> for DatasetRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Object(obj) => record_from_object(&obj).map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!("expected a record object, got {}", other))),
        }
    }
}

fn record_from_object(obj: &Map<String, Value>) -> Result<DatasetRecord, FormatError> {
    let id = take_str(obj, "id")?;
    if id.is_empty() {
        return Err(FormatError::InvalidField { field: "id", reason: "empty".into() });
    }
    let question_id = take_str(obj, "question_id")?;
    let db_id = take_str(obj, "db_id")?;
    let dialect = dialect_field(obj)?;
    let sql = take_str(obj, "sql")?;
    let round = take_round(obj)?;
    let status = match take_opt_str(obj, "status")? {
        Some(s) => RecordStatus::from_tag(&s)?,
        None => RecordStatus::Untested,
    };
    let provenance = match take_opt_str(obj, "provenance")? {
        Some(s) => Provenance::from_tag(&s)?,
        None => Provenance::Manual,
    };
    let question = take_opt_str(obj, "question")?.unwrap_or_default();
    Ok(DatasetRecord { db_id, dialect, id, provenance, question, question_id, round, sql, status })
}

pub fn serialize_record(r: &DatasetRecord) -> String {
    // serde_json escapes control characters, so the output never spans lines.
    serde_json::to_string(r).expect("record serialization is infallible")
}

/// Outcome of one execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

/// Execution error taxonomy shared by every backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    Syntax,
    DialectViolation,
    UnknownObject,
    Type,
    StrictGroupBy,
    Runtime,
    Timeout,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Syntax => "syntax",
            ErrorClass::DialectViolation => "dialect-violation",
            ErrorClass::UnknownObject => "unknown-object",
            ErrorClass::Type => "type",
            ErrorClass::StrictGroupBy => "strict-group-by",
            ErrorClass::Runtime => "runtime",
            ErrorClass::Timeout => "timeout",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a candidate earned reward 0. Ordered from least to most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    WrongResult,
    Runtime,
    Timeout,
    UnknownObject,
    Type,
    StrictGroupBy,
    Syntax,
    DialectViolation,
    ExtractionFailure,
}

impl FailureKind {
    pub fn from_error_class(c: ErrorClass) -> Self {
        match c {
            ErrorClass::Syntax => FailureKind::Syntax,
            ErrorClass::DialectViolation => FailureKind::DialectViolation,
            ErrorClass::UnknownObject => FailureKind::UnknownObject,
            ErrorClass::Type => FailureKind::Type,
            ErrorClass::StrictGroupBy => FailureKind::StrictGroupBy,
            ErrorClass::Runtime => FailureKind::Runtime,
            ErrorClass::Timeout => FailureKind::Timeout,
        }
    }

    /// Severity tier: extraction failure > parse/dialect >
    /// unknown-object/type/strict-group-by > runtime/timeout > wrong-result.
    pub fn severity(self) -> u8 {
        match self {
            FailureKind::WrongResult => 0,
            FailureKind::Runtime | FailureKind::Timeout => 1,
            FailureKind::UnknownObject | FailureKind::Type | FailureKind::StrictGroupBy => 2,
            FailureKind::Syntax | FailureKind::DialectViolation => 3,
            FailureKind::ExtractionFailure => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::WrongResult => "wrong-result",
            FailureKind::Runtime => "runtime",
            FailureKind::Timeout => "timeout",
            FailureKind::UnknownObject => "unknown-object",
            FailureKind::Type => "type",
            FailureKind::StrictGroupBy => "strict-group-by",
            FailureKind::Syntax => "syntax",
            FailureKind::DialectViolation => "dialect-violation",
            FailureKind::ExtractionFailure => "extraction-failure",
        }
    }
}

/// Compact view of an execution report kept alongside exported pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub status: ExecStatus,
    pub failure: Option<FailureKind>,
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceRecord {
    pub id: String,
    pub question_id: String,
    pub question: String,
    pub db_id: String,
    pub dialect: Dialect,
    pub chosen: String,
    pub rejected: String,
    pub chosen_report: ReportSummary,
    pub rejected_report: ReportSummary,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PreferenceError {
    #[error("chosen and rejected SQL are identical")]
    IdenticalSides,
    #[error("chosen side must carry reward 1")]
    ChosenNotRewarded,
    #[error("rejected side must carry reward 0")]
    RejectedRewarded,
}

impl PreferenceRecord {
    pub fn validate(&self) -> Result<(), PreferenceError> {
        if self.chosen == self.rejected {
            return Err(PreferenceError::IdenticalSides);
        }
        if self.chosen_report.reward != 1 {
            return Err(PreferenceError::ChosenNotRewarded);
        }
        if self.rejected_report.reward != 0 {
            return Err(PreferenceError::RejectedRewarded);
        }
        Ok(())
    }
}

/// Flat on-disk layout of a preference record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PreferenceLine {
    chosen: String,
    chosen_reward: u8,
    chosen_status: ExecStatus,
    db_id: String,
    dialect: Dialect,
    id: String,
    question: String,
    question_id: String,
    rejected: String,
    rejected_error_class: Option<FailureKind>,
    rejected_reward: u8,
    rejected_status: ExecStatus,
}

pub fn serialize_preference(p: &PreferenceRecord) -> Result<String, PreferenceError> {
    p.validate()?;
    let line = PreferenceLine {
        chosen: p.chosen.clone(),
        chosen_reward: p.chosen_report.reward,
        chosen_status: p.chosen_report.status,
        db_id: p.db_id.clone(),
        dialect: p.dialect,
        id: p.id.clone(),
        question: p.question.clone(),
        question_id: p.question_id.clone(),
        rejected: p.rejected.clone(),
        rejected_error_class: p.rejected_report.failure,
        rejected_reward: p.rejected_report.reward,
        rejected_status: p.rejected_report.status,
    };
    Ok(serde_json::to_string(&line).expect("preference serialization is infallible"))
}

pub fn parse_preference(line: &str) -> Result<PreferenceRecord, FormatError> {
    let l: PreferenceLine = serde_json::from_str(line).map_err(|e| FormatError::Json(e.to_string()))?;
    let p = PreferenceRecord {
        id: l.id,
        question_id: l.question_id,
        question: l.question,
        db_id: l.db_id,
        dialect: l.dialect,
        chosen: l.chosen,
        rejected: l.rejected,
        chosen_report: ReportSummary { status: l.chosen_status, failure: None, reward: l.chosen_reward },
        rejected_report: ReportSummary { status: l.rejected_status, failure: l.rejected_error_class, reward: l.rejected_reward },
    };
    p.validate().map_err(|e| FormatError::InvalidField { field: "chosen", reason: e.to_string() })?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Translate,
    Sample,
    BuildPrefs,
    Evaluate,
    Report,
}

impl Stage {
    pub const ORDER: [Stage; 5] = [Stage::Translate, Stage::Sample, Stage::BuildPrefs, Stage::Evaluate, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Translate => "translate",
            Stage::Sample => "sample",
            Stage::BuildPrefs => "build-prefs",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ORDER.iter().copied().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage '{}'", s))
    }
}

/// Persisted description of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub stage: Option<Stage>,
    pub completed: Vec<Stage>,
    pub counters: BTreeMap<String, u64>,
    pub created_at: String,
    pub updated_at: String,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, config_digest: impl Into<String>, now: impl Into<String>) -> Self {
        let now = now.into();
        RunManifest {
            run_id: run_id.into(),
            config_digest: config_digest.into(),
            stage: None,
            completed: Vec::new(),
            counters: BTreeMap::new(),
            created_at: now.clone(),
            updated_at: now,
        }
    }

    /// Counters only grow within a run.
    pub fn bump(&mut self, name: &str, delta: u64) {
        *self.counters.entry(name.to_string()).or_insert(0) += delta;
    }

    pub fn raise_to(&mut self, name: &str, value: u64) {
        let slot = self.counters.entry(name.to_string()).or_insert(0);
        *slot = (*slot).max(value);
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.completed.contains(&stage)
    }

    pub fn mark_complete(&mut self, stage: Stage, now: impl Into<String>) {
        if !self.completed.contains(&stage) {
            self.completed.push(stage);
        }
        self.stage = Some(stage);
        self.updated_at = now.into();
    }
}

pub fn check_unique_ids<'a, I>(ids: I) -> Result<(), FormatError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(FormatError::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

/// Reads every line of a record file; fails on the first malformed line or duplicate id.
pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, FormatError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line).map_err(|e| FormatError::AtLine { line: i + 1, source: Box::new(e) })?;
        out.push(rec);
    }
    check_unique_ids(out.iter().map(|r| r.id.as_str()))?;
    Ok(out)
}

pub fn read_preferences(path: &Path) -> Result<Vec<PreferenceRecord>, FormatError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_preference(&line).map_err(|e| FormatError::AtLine { line: i + 1, source: Box::new(e) })?);
    }
    Ok(out)
}

/// Reads arbitrary serde-typed JSON lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| FormatError::AtLine { line: i + 1, source: Box::new(FormatError::Json(e.to_string())) })?;
        out.push(v);
    }
    Ok(out)
}

/// Single writer for one line-delimited output file.
pub struct LineWriter {
    inner: BufWriter<File>,
    ids: HashSet<String>,
}

impl LineWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(LineWriter { inner: BufWriter::new(File::create(path)?), ids: HashSet::new() })
    }

    pub fn append(path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LineWriter { inner: BufWriter::new(f), ids: HashSet::new() })
    }

    pub fn write_line(&mut self, line: &str) -> std::io::Result<()> {
        debug_assert!(!line.contains('\n'));
        self.inner.write_all(line.as_bytes())?;
        self.inner.write_all(b"\n")
    }

    pub fn write_record(&mut self, r: &DatasetRecord) -> Result<(), FormatError> {
        if !self.ids.insert(r.id.clone()) {
            return Err(FormatError::DuplicateId(r.id.clone()));
        }
        self.write_line(&serialize_record(r))?;
        Ok(())
    }

    pub fn write_preference(&mut self, p: &PreferenceRecord) -> Result<(), FormatError> {
        let line = serialize_preference(p).map_err(|e| FormatError::InvalidField { field: "chosen", reason: e.to_string() })?;
        if !self.ids.insert(p.id.clone()) {
            return Err(FormatError::DuplicateId(p.id.clone()));
        }
        self.write_line(&line)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, v: &T) -> std::io::Result<()> {
        let line = serde_json::to_string(v).map_err(std::io::Error::other)?;
        self.write_line(&line)
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

impl Drop for LineWriter {
    fn drop(&mut self) {
        let _ = self.inner.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetRecord {
        DatasetRecord {
            db_id: "concert_singer".into(),
            dialect: Dialect::Postgres,
            id: "q1/postgres".into(),
            provenance: Provenance::Translated,
            question: "How many singers do we have?".into(),
            question_id: "q1".into(),
            round: 1,
            sql: "SELECT count(*) FROM singer".into(),
            status: RecordStatus::Valid,
        }
    }

    #[test]
    fn minimal_record_defaults_to_untested() {
        let line = r#"{"id":"a","question_id":"q","db_id":"d","dialect":"mysql","sql":"SELECT 1"}"#;
        let r = parse_record(line).unwrap();
        assert_eq!(r.status, RecordStatus::Untested);
        assert_eq!(r.round, 0);
        assert_eq!(parse_record(&serialize_record(&r)).unwrap(), r);
    }

    #[test]
    fn missing_sql_is_named() {
        let line = r#"{"id":"a","question_id":"q","db_id":"d","dialect":"mysql"}"#;
        let err = parse_record(line).unwrap_err();
        assert_eq!(err.to_string(), "missing field sql");
    }

    #[test]
    fn negative_round_rejected() {
        let line = r#"{"id":"a","question_id":"q","db_id":"d","dialect":"mysql","sql":"x","round":-1}"#;
        let err = parse_record(line).unwrap_err();
        assert!(matches!(err, FormatError::InvalidField { field: "round", .. }), "{err}");
    }

    #[test]
    fn canonical_field_order_is_alphabetical() {
        let line = serialize_record(&sample());
        let keys: Vec<String> = {
            let v: Value = serde_json::from_str(&line).unwrap();
            v.as_object().unwrap().keys().cloned().collect()
        };
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(line.starts_with(r#"{"db_id":"concert_singer","dialect":"postgres","id":"q1/postgres""#));
    }

    #[test]
    fn records_differing_in_id_differ_only_there() {
        let a = sample();
        let mut b = sample();
        b.id = "q1/mysql".into();
        let (la, lb) = (serialize_record(&a), serialize_record(&b));
        assert_ne!(la, lb);
        assert_eq!(la.replace("q1/postgres", "X"), lb.replace("q1/mysql", "X"));
    }

    #[test]
    fn unicode_and_newlines_stay_on_one_line() {
        let mut r = sample();
        r.question = "Qué año?\nsegunda línea ¿ 東京".into();
        let line = serialize_record(&r);
        assert_eq!(line.lines().count(), 1);
        assert_eq!(parse_record(&line).unwrap(), r);
    }

    #[test]
    fn dialect_tags() {
        assert_eq!(parse_dialect("PostgreSQL").unwrap(), Dialect::Postgres);
        assert_eq!(parse_dialect("MYSQL").unwrap(), Dialect::Mysql);
        let err = parse_dialect("duckdb").unwrap_err();
        assert!(err.to_string().contains("sqlite, postgres, mysql, oracle"));
    }

    #[test]
    fn preference_invariants_enforced_on_write() {
        let ok = ReportSummary { status: ExecStatus::Ok, failure: None, reward: 1 };
        let bad = ReportSummary { status: ExecStatus::Ok, failure: Some(FailureKind::WrongResult), reward: 0 };
        let mut p = PreferenceRecord {
            id: "p".into(),
            question_id: "q".into(),
            question: "?".into(),
            db_id: "d".into(),
            dialect: Dialect::Postgres,
            chosen: "SELECT 1".into(),
            rejected: "SELECT 2".into(),
            chosen_report: ok.clone(),
            rejected_report: bad.clone(),
        };
        let line = serialize_preference(&p).unwrap();
        assert_eq!(parse_preference(&line).unwrap().rejected_report, bad);
        p.rejected = p.chosen.clone();
        assert_eq!(serialize_preference(&p), Err(PreferenceError::IdenticalSides));
        p.rejected = "SELECT 2".into();
        p.rejected_report = ok;
        assert_eq!(serialize_preference(&p), Err(PreferenceError::RejectedRewarded));
    }

    #[test]
    fn duplicate_ids_detected() {
        assert!(check_unique_ids(["a", "b", "a"]).is_err());
        assert!(check_unique_ids(["a", "b"]).is_ok());
    }

    #[test]
    fn severity_tiers() {
        assert!(FailureKind::ExtractionFailure.severity() > FailureKind::Syntax.severity());
        assert_eq!(FailureKind::Syntax.severity(), FailureKind::DialectViolation.severity());
        assert!(FailureKind::StrictGroupBy.severity() > FailureKind::Runtime.severity());
        assert!(FailureKind::Runtime.severity() > FailureKind::WrongResult.severity());
    }
}
