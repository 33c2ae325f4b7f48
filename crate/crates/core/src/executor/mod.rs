//! Uniform execution over embedded and live backends, plus the reward and
//! result-comparison rules that define execution accuracy.

mod classify;
mod embedded;
mod pgwire;
mod subprocess;

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::classify_error;
pub use embedded::{catalog_for, Catalog, CatalogError, EmbeddedBackend};
pub use pgwire::PgWireBackend;
pub use subprocess::SubprocessBackend;

use crate::engine::{parse_sql, DialectMode, ResultTable, Value};
use crate::model::{Dialect, ErrorClass, ExecStatus};

/// Embedded backend default per-query timeout.
pub const EMBEDDED_TIMEOUT: Duration = Duration::from_secs(1);
/// Live backend default per-query timeout.
pub const LIVE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecReport {
    pub backend: String,
    /// Seconds.
    pub elapsed: f64,
    pub error_class: Option<ErrorClass>,
    /// Backend error text, verbatim.
    pub raw_error: Option<String>,
    pub result: Option<ResultTable>,
    pub status: ExecStatus,
}

impl ExecReport {
    pub fn ok(backend: &str, result: ResultTable, elapsed: f64) -> Self {
        ExecReport { backend: backend.into(), elapsed, error_class: None, raw_error: None, result: Some(result), status: ExecStatus::Ok }
    }

    pub fn error(backend: &str, class: ErrorClass, raw: impl Into<String>, elapsed: f64) -> Self {
        let status = if class == ErrorClass::Timeout { ExecStatus::Timeout } else { ExecStatus::Error };
        ExecReport { backend: backend.into(), elapsed, error_class: Some(class), raw_error: Some(raw.into()), result: None, status }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    /// Same report with `elapsed` zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        ExecReport { elapsed: 0.0, ..self.clone() }
    }
}

/// How two result tables are compared. Column labels are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparePolicy {
    pub order_sensitive: bool,
    /// Relative tolerance for numeric cells.
    pub float_tolerance: f64,
    pub null_equals_null: bool,
}

impl Default for ComparePolicy {
    fn default() -> Self {
        ComparePolicy { order_sensitive: false, float_tolerance: 1e-6, null_equals_null: true }
    }
}

impl ComparePolicy {
    /// Order matters iff the gold query has a top-level ORDER BY.
    pub fn for_gold_sql(sql: &str, dialect: Dialect) -> Self {
        let order_sensitive = parse_sql(sql, &DialectMode::for_dialect(dialect)).map(|q| !q.order_by.is_empty()).unwrap_or(false);
        ComparePolicy { order_sensitive, ..ComparePolicy::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardPolicy {
    ExecOnly,
    ExecAndMatch,
}

impl std::str::FromStr for RewardPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exec-only" => Ok(RewardPolicy::ExecOnly),
            "exec-and-match" => Ok(RewardPolicy::ExecAndMatch),
            _ => Err(format!("unknown reward policy '{}' (expected exec-only or exec-and-match)", s)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("exec-and-match reward needs a gold result")]
    MissingGold,
}

fn cell_eq(a: &Value, b: &Value, p: &ComparePolicy) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => p.null_equals_null,
        (Value::Null, _) | (_, Value::Null) => false,
        _ if a == b => true,
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) if p.float_tolerance > 0.0 => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            (x - y).abs() <= p.float_tolerance * x.abs().max(y.abs())
        }
        _ => false,
    }
}

fn row_eq(a: &[Value], b: &[Value], p: &ComparePolicy) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cell_eq(x, y, p))
}

fn row_cmp(a: &[Value], b: &[Value]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c.is_ne() {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

pub fn compare_results(actual: &ResultTable, expected: &ResultTable, policy: &ComparePolicy) -> bool {
    if actual.rows.len() != expected.rows.len() {
        return false;
    }
    if policy.order_sensitive {
        return actual.rows.iter().zip(&expected.rows).all(|(a, e)| row_eq(a, e, policy));
    }
    let mut a: Vec<&Vec<Value>> = actual.rows.iter().collect();
    let mut e: Vec<&Vec<Value>> = expected.rows.iter().collect();
    a.sort_by(|x, y| row_cmp(x, y));
    e.sort_by(|x, y| row_cmp(x, y));
    if a.iter().zip(&e).all(|(x, y)| row_eq(x, y, policy)) {
        return true;
    }
    if policy.float_tolerance == 0.0 && policy.null_equals_null {
        return false;
    }
    // Sorting can misalign rows whose floats differ within tolerance.
    let mut used = vec![false; e.len()];
    'rows: for x in &a {
        for (j, y) in e.iter().enumerate() {
            if !used[j] && row_eq(x, y, policy) {
                used[j] = true;
                continue 'rows;
            }
        }
        return false;
    }
    true
}

pub fn reward(report: &ExecReport, gold: Option<&ResultTable>, policy: RewardPolicy, cmp: &ComparePolicy) -> Result<u8, RewardError> {
    match policy {
        RewardPolicy::ExecOnly => Ok(report.is_ok() as u8),
        RewardPolicy::ExecAndMatch => {
            let gold = gold.ok_or(RewardError::MissingGold)?;
            Ok(match &report.result {
                Some(r) if report.is_ok() => compare_results(r, gold, cmp) as u8,
                _ => 0,
            })
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("no backend registered for dialect {0}")]
    UnknownBackend(Dialect),
    #[error("unknown database '{0}'")]
    UnknownDb(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// What a backend returns for one statement.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendOutcome {
    Rows(ResultTable),
    /// `class` is set when the backend knows it; otherwise the gateway classifies `raw`.
    Failed {
        raw: String,
        class: Option<ErrorClass>,
    },
    TimedOut,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn dialect(&self) -> Dialect;
    fn max_workers(&self) -> usize {
        1
    }
    /// Makes `db_ref` ready and returns the time its import took.
    fn prepare(&self, db_ref: &str) -> Result<Duration, GatewayError>;
    fn execute(&self, sql: &str, db_ref: &str, timeout: Duration) -> BackendOutcome;
    /// True when `execute` honors its timeout itself; otherwise the gateway
    /// runs the call on a watchdog thread.
    fn enforces_timeout(&self) -> bool {
        false
    }
    /// Trivial round trip used by config validation.
    fn probe(&self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Embedded,
    Wire,
    Subprocess,
}

/// Per-dialect backend block of the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub dialect: Dialect,
    pub kind: BackendKind,
    /// Wire: `postgres://user@host:port/db`. Subprocess: command line with
    /// `{db}` and `{sql}` placeholders. Unused for embedded.
    #[serde(default)]
    pub dsn: Option<String>,
    #[serde(default = "default_workers")]
    pub max_workers: usize,
    #[serde(default)]
    pub timeout_s: Option<f64>,
    /// Environment variable holding a password for live backends.
    #[serde(default)]
    pub password_env: Option<String>,
    /// Embedded only: override strict GROUP BY for this dialect.
    #[serde(default)]
    pub strict_group_by: Option<bool>,
}

fn default_workers() -> usize {
    4
}

impl BackendConfig {
    pub fn embedded(dialect: Dialect) -> Self {
        BackendConfig {
            dialect,
            kind: BackendKind::Embedded,
            dsn: None,
            max_workers: default_workers(),
            timeout_s: None,
            password_env: None,
            strict_group_by: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        match (self.timeout_s, self.kind) {
            (Some(s), _) => Duration::from_secs_f64(s.max(0.0)),
            (None, BackendKind::Embedded) => EMBEDDED_TIMEOUT,
            (None, _) => LIVE_TIMEOUT,
        }
    }
}

pub fn build_backend(cfg: &BackendConfig, catalog: Arc<Catalog>) -> Result<Arc<dyn Backend>, GatewayError> {
    let need_dsn =
        || cfg.dsn.clone().ok_or_else(|| GatewayError::Backend(format!("{} backend for {} needs a dsn", kind_name(cfg.kind), cfg.dialect)));
    Ok(match cfg.kind {
        BackendKind::Embedded => {
            let mut mode = DialectMode::for_dialect(cfg.dialect);
            if let Some(s) = cfg.strict_group_by {
                mode.strict_group_by = s;
            }
            Arc::new(EmbeddedBackend::new(mode, catalog, cfg.max_workers))
        }
        BackendKind::Subprocess => Arc::new(SubprocessBackend::new(cfg.dialect, &need_dsn()?, cfg.max_workers)?),
        BackendKind::Wire => {
            if cfg.dialect != Dialect::Postgres {
                return Err(GatewayError::Backend(format!("wire backend is only available for postgres, not {}", cfg.dialect)));
            }
            let password = cfg.password_env.as_ref().and_then(|v| std::env::var(v).ok());
            Arc::new(PgWireBackend::new(&need_dsn()?, password, cfg.max_workers)?)
        }
    })
}

fn kind_name(k: BackendKind) -> &'static str {
    match k {
        BackendKind::Embedded => "embedded",
        BackendKind::Wire => "wire",
        BackendKind::Subprocess => "subprocess",
    }
}

/// Routes statements to the backend registered for their dialect.
#[derive(Clone, Default)]
pub struct Gateway {
    backends: BTreeMap<Dialect, (Arc<dyn Backend>, Duration)>,
}

impl Gateway {
    pub fn new() -> Self {
        Gateway::default()
    }

    /// All four dialects on the embedded engine over one catalog.
    pub fn embedded(catalog: Arc<Catalog>) -> Self {
        let mut g = Gateway::new();
        for d in crate::model::ALL_DIALECTS {
            g.register(Arc::new(EmbeddedBackend::new(DialectMode::for_dialect(d), catalog.clone(), default_workers())), EMBEDDED_TIMEOUT);
        }
        g
    }

    pub fn register(&mut self, backend: Arc<dyn Backend>, timeout: Duration) {
        self.backends.insert(backend.dialect(), (backend, timeout));
    }

    pub fn backend(&self, d: Dialect) -> Option<&Arc<dyn Backend>> {
        self.backends.get(&d).map(|(b, _)| b)
    }

    pub fn default_timeout(&self, d: Dialect) -> Option<Duration> {
        self.backends.get(&d).map(|(_, t)| *t)
    }

    /// Runs with the backend's configured timeout.
    pub fn run_default(&self, sql: &str, dialect: Dialect, db_ref: &str) -> Result<ExecReport, GatewayError> {
        let t = self.default_timeout(dialect).ok_or(GatewayError::UnknownBackend(dialect))?;
        self.run(sql, dialect, db_ref, t)
    }

    pub fn run(&self, sql: &str, dialect: Dialect, db_ref: &str, timeout: Duration) -> Result<ExecReport, GatewayError> {
        let (backend, _) = self.backends.get(&dialect).ok_or(GatewayError::UnknownBackend(dialect))?;
        backend.prepare(db_ref)?;
        let start = Instant::now();
        let outcome =
            if backend.enforces_timeout() { backend.execute(sql, db_ref, timeout) } else { watchdog(backend.clone(), sql, db_ref, timeout) };
        let elapsed = start.elapsed().as_secs_f64();
        let name = backend.name();
        Ok(match outcome {
            BackendOutcome::Rows(t) => ExecReport::ok(name, t, elapsed),
            BackendOutcome::Failed { raw, class } => {
                let c = class.unwrap_or_else(|| classify_error(&raw, dialect));
                ExecReport::error(name, c, raw, elapsed)
            }
            BackendOutcome::TimedOut => {
                ExecReport::error(name, ErrorClass::Timeout, format!("statement timed out after {:.3}s", timeout.as_secs_f64()), elapsed)
            }
        })
    }

    /// Runs a batch with at most `workers` concurrent calls (further capped by
    /// the backend's own bound). Output order matches input order.
    pub fn run_batch(&self, items: &[(String, String)], dialect: Dialect, workers: usize) -> Result<Vec<ExecReport>, GatewayError> {
        let (backend, timeout) = self.backends.get(&dialect).ok_or(GatewayError::UnknownBackend(dialect))?;
        let timeout = *timeout;
        let n = workers.max(1).min(backend.max_workers().max(1)).min(items.len().max(1));
        let next = AtomicUsize::new(0);
        let out: Mutex<Vec<Option<Result<ExecReport, GatewayError>>>> = Mutex::new(vec![None; items.len()]);
        std::thread::scope(|s| {
            for _ in 0..n {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, AtomicOrdering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let (sql, db) = &items[i];
                    let r = self.run(sql, dialect, db, timeout);
                    out.lock().unwrap()[i] = Some(r);
                });
            }
        });
        out.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
    }
}

fn watchdog(backend: Arc<dyn Backend>, sql: &str, db_ref: &str, timeout: Duration) -> BackendOutcome {
    let (tx, rx) = mpsc::channel();
    let (sql, db) = (sql.to_string(), db_ref.to_string());
    std::thread::spawn(move || {
        let _ = tx.send(backend.execute(&sql, &db, timeout));
    });
    match rx.recv_timeout(timeout) {
        Ok(o) => o,
        Err(mpsc::RecvTimeoutError::Timeout) => BackendOutcome::TimedOut,
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            BackendOutcome::Failed { raw: "backend worker terminated".into(), class: Some(ErrorClass::Runtime) }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    /// Mean seconds per distinct database import.
    pub avg_import: f64,
    /// Mean seconds per executed statement, ok or error.
    pub avg_exec: f64,
    /// Sum of statement seconds.
    pub total: f64,
    pub queries: usize,
}

pub fn profile_execution(gw: &Gateway, batch: &[(String, String)], dialect: Dialect) -> Result<TimingStats, GatewayError> {
    if batch.is_empty() {
        return Err(GatewayError::EmptyBatch);
    }
    let (backend, timeout) = gw.backends.get(&dialect).ok_or(GatewayError::UnknownBackend(dialect))?;
    let mut seen = HashSet::new();
    let mut import = 0.0;
    for (_, db) in batch {
        if seen.insert(db.clone()) {
            import += backend.prepare(db)?.as_secs_f64();
        }
    }
    let mut total = 0.0;
    for (sql, db) in batch {
        total += gw.run(sql, dialect, db, *timeout)?.elapsed;
    }
    Ok(TimingStats { avg_import: import / seen.len() as f64, avg_exec: total / batch.len() as f64, total, queries: batch.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<Value>>) -> ResultTable {
        ResultTable { columns: vec![], rows }
    }

    #[test]
    fn order_sensitivity() {
        let a = table(vec![vec![Value::Int(1)], vec![Value::Int(2)]]);
        let b = table(vec![vec![Value::Int(2)], vec![Value::Int(1)]]);
        assert!(compare_results(&a, &b, &ComparePolicy::default()));
        let strict = ComparePolicy { order_sensitive: true, ..ComparePolicy::default() };
        assert!(!compare_results(&a, &b, &strict));
    }

    #[test]
    fn float_tolerance() {
        let a = table(vec![vec![Value::Float(0.1 + 0.2)]]);
        let b = table(vec![vec![Value::Float(0.3)]]);
        assert!(compare_results(&a, &b, &ComparePolicy::default()));
        let exact = ComparePolicy { float_tolerance: 0.0, ..ComparePolicy::default() };
        assert!(!compare_results(&a, &b, &exact));
    }

    #[test]
    fn empty_results_match() {
        assert!(compare_results(&table(vec![]), &table(vec![]), &ComparePolicy::default()));
    }

    #[test]
    fn order_detection_from_gold() {
        assert!(ComparePolicy::for_gold_sql("SELECT a FROM t ORDER BY a", Dialect::Sqlite).order_sensitive);
        assert!(!ComparePolicy::for_gold_sql("SELECT a FROM (SELECT a FROM t ORDER BY a) AS s", Dialect::Sqlite).order_sensitive);
    }

    #[test]
    fn reward_policies() {
        let gold = table(vec![vec![Value::Int(1)]]);
        let ok = ExecReport::ok("e", gold.clone(), 0.0);
        let wrong = ExecReport::ok("e", table(vec![vec![Value::Int(2)]]), 0.0);
        let err = ExecReport::error("e", ErrorClass::Syntax, "x", 0.0);
        let c = ComparePolicy::default();
        assert_eq!(reward(&ok, None, RewardPolicy::ExecOnly, &c), Ok(1));
        assert_eq!(reward(&err, None, RewardPolicy::ExecOnly, &c), Ok(0));
        assert_eq!(reward(&err, Some(&gold), RewardPolicy::ExecAndMatch, &c), Ok(0));
        assert_eq!(reward(&wrong, Some(&gold), RewardPolicy::ExecAndMatch, &c), Ok(0));
        assert_eq!(reward(&ok, Some(&gold), RewardPolicy::ExecAndMatch, &c), Ok(1));
        assert_eq!(reward(&ok, None, RewardPolicy::ExecAndMatch, &c), Err(RewardError::MissingGold));
    }

    struct Sleeper;

    impl Backend for Sleeper {
        fn name(&self) -> &str {
            "sleeper"
        }
        fn dialect(&self) -> Dialect {
            Dialect::Mysql
        }
        fn prepare(&self, _: &str) -> Result<Duration, GatewayError> {
            Ok(Duration::ZERO)
        }
        fn execute(&self, _: &str, _: &str, _: Duration) -> BackendOutcome {
            std::thread::sleep(Duration::from_millis(300));
            BackendOutcome::Rows(ResultTable::default())
        }
    }

    #[test]
    fn watchdog_times_out_slow_backend() {
        let mut g = Gateway::new();
        g.register(Arc::new(Sleeper), Duration::from_millis(10));
        let r = g.run("SELECT SLEEP(1)", Dialect::Mysql, "any", Duration::from_millis(10)).unwrap();
        assert_eq!(r.status, ExecStatus::Timeout);
        assert_eq!(r.error_class, Some(ErrorClass::Timeout));
        assert!(r.result.is_none());
    }

    #[test]
    fn unknown_backend_is_gateway_error() {
        let g = Gateway::new();
        assert_eq!(g.run("SELECT 1", Dialect::Oracle, "x", LIVE_TIMEOUT).unwrap_err(), GatewayError::UnknownBackend(Dialect::Oracle));
    }
}
