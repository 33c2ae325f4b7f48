#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use dialect_forge::executor::{Catalog, Gateway};
use dialect_forge::llm::{Decoding, GenRequest, GenerationModel, LlmError, RetryPolicy, Templates};
use dialect_forge::model::{DatasetRecord, NLQuestion, QuestionSource, RunManifest};
use dialect_forge::pipeline::{PipelineConfig, Runtime};
use dialect_forge::services::Services;

pub mod props;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Embedded backends for every dialect over the bundled fixture databases.
pub struct Harness {
    pub catalog: Arc<Catalog>,
    pub gateway: Gateway,
    pub templates: Templates,
}

impl Harness {
    pub fn new() -> Self {
        let catalog = Arc::new(Catalog::new(vec![fixtures().join("db")]));
        Harness { gateway: Gateway::embedded(catalog.clone()), catalog, templates: Templates::builtin() }
    }

    pub fn services<'a>(&'a self, model: &'a dyn GenerationModel) -> Services<'a> {
        Services {
            gateway: &self.gateway,
            model,
            templates: &self.templates,
            catalog: &self.catalog,
            retry: RetryPolicy::none(),
            decoding: Decoding::default(),
            workers: 4,
        }
    }
}

pub fn question(id: &str, text: &str, db_id: &str) -> NLQuestion {
    NLQuestion { id: id.into(), text: text.into(), db_id: db_id.into(), source: QuestionSource::Seed, value_grounded: false }
}

/// Wraps a model and keeps every prompt it was sent.
pub struct Recording<M> {
    pub inner: M,
    pub prompts: Mutex<Vec<String>>,
}

impl<M> Recording<M> {
    pub fn new(inner: M) -> Self {
        Recording { inner, prompts: Mutex::new(Vec::new()) }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl<M: GenerationModel> GenerationModel for Recording<M> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<String>, LlmError> {
        self.prompts.lock().unwrap().push(req.prompt.clone());
        self.inner.generate(req)
    }
}

/// Loads the bundled pipeline config with its output redirected.
pub fn pipeline_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&fixtures().join("pipeline.toml")).expect("fixture config loads");
    cfg.output_dir = out.to_path_buf();
    cfg
}

pub fn runtime(cfg: PipelineConfig) -> Runtime {
    let (rt, diags) = Runtime::prepare(cfg);
    rt.unwrap_or_else(|| panic!("runtime did not start: {:?}", diags.iter().map(|d| d.to_string()).collect::<Vec<_>>()))
}

/// Every file under `dir` with its bytes, keyed by relative path. The
/// manifest is reduced to its timestamp-free fields.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            let mut bytes = std::fs::read(&p).unwrap();
            if rel == "manifest.json" {
                let mut m: RunManifest = serde_json::from_slice(&bytes).unwrap();
                m.created_at.clear();
                m.updated_at.clear();
                bytes = serde_json::to_vec(&m).unwrap();
            }
            out.push((rel, bytes));
        }
    }
    out.sort();
    out
}

pub fn read_records(path: &Path) -> Vec<DatasetRecord> {
    dialect_forge::model::read_records(path).unwrap_or_else(|e| panic!("{}: {}", path.display(), e))
}
