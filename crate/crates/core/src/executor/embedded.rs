use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{Backend, BackendOutcome, GatewayError};
use crate::engine::{execute_with, load_database, parse_sql, DialectMode, EngineErrorClass, ExecOptions, InMemoryDb, LoadError};
use crate::model::{Dialect, ErrorClass};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown database '{0}'")]
    Unknown(String),
    #[error(transparent)]
    Load(#[from] LoadError),
}

struct Loaded {
    db: Arc<InMemoryDb>,
    import: Duration,
}

/// Fixture databases keyed by db id, loaded lazily from `<dir>/<db_id>.json`
/// and kept for the life of the catalog.
#[derive(Default)]
pub struct Catalog {
    dirs: Vec<PathBuf>,
    cache: Mutex<HashMap<String, Loaded>>,
}

impl Catalog {
    pub fn new(dirs: Vec<PathBuf>) -> Self {
        Catalog { dirs, cache: Mutex::new(HashMap::new()) }
    }

    pub fn insert(&self, db: InMemoryDb) {
        let id = db.db_id.clone();
        self.cache.lock().unwrap().insert(id, Loaded { db: Arc::new(db), import: Duration::ZERO });
    }

    fn path_for(&self, db_id: &str) -> Option<PathBuf> {
        if db_id.is_empty() || db_id.contains(['/', '\\']) || db_id.starts_with('.') {
            return None;
        }
        self.dirs.iter().map(|d| d.join(format!("{}.json", db_id))).find(|p| p.is_file())
    }

    /// The database and the time its first load took.
    pub fn get(&self, db_id: &str) -> Result<(Arc<InMemoryDb>, Duration), CatalogError> {
        let mut cache = self.cache.lock().unwrap();
        if let Some(l) = cache.get(db_id) {
            return Ok((l.db.clone(), l.import));
        }
        let path = self.path_for(db_id).ok_or_else(|| CatalogError::Unknown(db_id.to_string()))?;
        let start = Instant::now();
        let mut db = load_database(&path)?;
        db.db_id = db_id.to_string();
        let import = start.elapsed();
        let db = Arc::new(db);
        cache.insert(db_id.to_string(), Loaded { db: db.clone(), import });
        Ok((db, import))
    }

    /// Ids of every fixture file in the catalog directories, sorted.
    pub fn ids(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .dirs
            .iter()
            .filter_map(|d| std::fs::read_dir(d).ok())
            .flatten()
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
            .collect();
        out.extend(self.cache.lock().unwrap().keys().cloned());
        out.sort();
        out.dedup();
        out
    }

    pub fn dirs(&self) -> &[PathBuf] {
        &self.dirs
    }
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog").field("dirs", &self.dirs).finish()
    }
}

pub(crate) fn class_of(c: EngineErrorClass) -> ErrorClass {
    match c {
        EngineErrorClass::Parse => ErrorClass::Syntax,
        EngineErrorClass::DialectViolation => ErrorClass::DialectViolation,
        EngineErrorClass::UnknownRelation | EngineErrorClass::UnknownColumn => ErrorClass::UnknownObject,
        EngineErrorClass::TypeMismatch => ErrorClass::Type,
        EngineErrorClass::StrictGroupBy => ErrorClass::StrictGroupBy,
        EngineErrorClass::UnsupportedFeature | EngineErrorClass::Runtime => ErrorClass::Runtime,
        EngineErrorClass::DeadlineExceeded => ErrorClass::Timeout,
    }
}

/// The in-process engine. Lock-free during execution: databases are shared
/// read-only.
pub struct EmbeddedBackend {
    name: String,
    mode: DialectMode,
    catalog: Arc<Catalog>,
    workers: usize,
}

impl EmbeddedBackend {
    pub fn new(mode: DialectMode, catalog: Arc<Catalog>, workers: usize) -> Self {
        EmbeddedBackend { name: format!("embedded-{}", mode.dialect), mode, catalog, workers }
    }

    pub fn mode(&self) -> &DialectMode {
        &self.mode
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }
}

impl Backend for EmbeddedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dialect(&self) -> Dialect {
        self.mode.dialect
    }

    fn max_workers(&self) -> usize {
        self.workers
    }

    fn prepare(&self, db_ref: &str) -> Result<Duration, GatewayError> {
        match self.catalog.get(db_ref) {
            Ok((_, t)) => Ok(t),
            Err(CatalogError::Unknown(id)) => Err(GatewayError::UnknownDb(id)),
            Err(e) => Err(GatewayError::Backend(e.to_string())),
        }
    }

    fn execute(&self, sql: &str, db_ref: &str, timeout: Duration) -> BackendOutcome {
        let db = match self.catalog.get(db_ref) {
            Ok((db, _)) => db,
            Err(e) => return BackendOutcome::Failed { raw: e.to_string(), class: Some(ErrorClass::UnknownObject) },
        };
        let opts = ExecOptions { deadline: Some(Instant::now() + timeout) };
        let result = parse_sql(sql, &self.mode).and_then(|q| execute_with(&q, &db, &self.mode, opts));
        match result {
            Ok(t) => BackendOutcome::Rows(t),
            Err(e) if e.class == EngineErrorClass::DeadlineExceeded => BackendOutcome::TimedOut,
            Err(e) => BackendOutcome::Failed { raw: e.message, class: Some(class_of(e.class)) },
        }
    }

    fn enforces_timeout(&self) -> bool {
        true
    }
}

/// Convenience for tests and tools: a catalog over one directory.
pub fn catalog_for(dir: &Path) -> Arc<Catalog> {
    Arc::new(Catalog::new(vec![dir.to_path_buf()]))
}
