//! Staged, resumable runs driven by one config file.

pub mod config;
mod stages;
pub mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    config_digest, interpolate_env, ConfigError, EvalStage, ModelConfig, Paths, PipelineConfig, PrefsStage, SampleStage, TranslateStage,
};

use crate::eval::{Benchmark, BenchmarkItem};
use crate::executor::{build_backend, BackendConfig, BackendKind, Catalog, Gateway};
use crate::llm::{ChatModel, GenRequest, GenerationModel, LlmError, RetryPolicy, ScriptedModel, Templates, TEMPLATE_NAMES};
use crate::model::{read_jsonl, Dialect, RunManifest, Stage};
use crate::services::Services;
use crate::translate::SourcePair;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    /// 1 for problems found before any work, 2 for a failed stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Stage { .. } => 2,
        }
    }

    fn stage(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError::Stage { stage: stage.as_str(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{:<7} {}", tag, self.message)
    }
}

/// One line of the questions file read by the sampling stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionLine {
    pub id: String,
    pub question: String,
    pub db_id: String,
    #[serde(default)]
    pub gold_sql: Option<String>,
}

/// One line of a model-outputs file for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputLine {
    pub id: String,
    pub output: String,
}

struct NoModel;

impl GenerationModel for NoModel {
    fn id(&self) -> &str {
        "none"
    }

    fn generate(&self, _req: &GenRequest) -> Result<Vec<String>, LlmError> {
        Err(LlmError::InvalidRequest("no model is configured".into()))
    }
}

/// Inputs named by the config, read once up front.
#[derive(Default)]
struct Inputs {
    pairs: Vec<SourcePair>,
    questions: Vec<QuestionLine>,
    benchmark: Vec<BenchmarkItem>,
    outputs: Option<Vec<OutputLine>>,
}

/// A validated config with its backends, model and inputs in place.
pub struct Runtime {
    pub cfg: PipelineConfig,
    pub catalog: Arc<Catalog>,
    pub gateway: Gateway,
    pub templates: Templates,
    model: Box<dyn GenerationModel>,
    inputs: Inputs,
    digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    Skipped,
    Ran(BTreeMap<String, u64>),
}

struct Check {
    diags: Vec<Diagnostic>,
    hashed: Vec<(String, Vec<u8>)>,
}

impl Check {
    fn info(&mut self, m: impl Into<String>) {
        self.diags.push(Diagnostic { severity: Severity::Info, message: m.into() });
    }

    fn warn(&mut self, m: impl Into<String>) {
        self.diags.push(Diagnostic { severity: Severity::Warning, message: m.into() });
    }

    fn error(&mut self, m: impl Into<String>) {
        self.diags.push(Diagnostic { severity: Severity::Error, message: m.into() });
    }

    /// Reads a file that feeds the run, remembering its bytes for the digest.
    fn input(&mut self, label: &str, path: &Path) -> Option<Vec<u8>> {
        match std::fs::read(path) {
            Ok(b) => {
                self.info(format!("{}: {}", label, path.display()));
                self.hashed.push((label.to_string(), b.clone()));
                Some(b)
            }
            Err(e) => {
                self.error(format!("{}: cannot read {}: {}", label, path.display(), e));
                None
            }
        }
    }
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..6])
}

fn load_jsonl<T: serde::de::DeserializeOwned>(c: &mut Check, label: &str, path: &Path) -> Option<Vec<T>> {
    c.input(label, path)?;
    match read_jsonl(path) {
        Ok(v) => Some(v),
        Err(e) => {
            c.error(format!("{}: {}: {}", label, path.display(), e));
            None
        }
    }
}

fn benchmark_files(path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut v: Vec<PathBuf> =
        std::fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "jsonl")).collect();
    v.sort();
    Ok(v)
}

fn check_paths(cfg: &PipelineConfig, c: &mut Check) -> Templates {
    for d in &cfg.paths.fixtures {
        match std::fs::read_dir(d) {
            Ok(_) => c.info(format!("fixtures: {}", d.display())),
            Err(e) => c.error(format!("fixtures: cannot read {}: {}", d.display(), e)),
        }
    }
    let templates = match &cfg.paths.templates {
        None => {
            c.info("templates: bundled");
            Templates::builtin()
        }
        Some(dir) => match std::fs::read_dir(dir).map_err(|e| e.to_string()).and_then(|_| Templates::load_dir(dir).map_err(|e| e.to_string())) {
            Ok(t) => {
                c.info(format!("templates: {}", dir.display()));
                t
            }
            Err(e) => {
                c.error(format!("templates: cannot read {}: {}", dir.display(), e));
                Templates::builtin()
            }
        },
    };
    for name in TEMPLATE_NAMES {
        if let Some(t) = templates.get(name) {
            c.info(format!("template {} sha256:{}", name, short_hash(t.as_bytes())));
        }
    }
    c.hashed.push(("templates".into(), templates.fingerprint().into_bytes()));
    templates
}

fn check_model(cfg: &PipelineConfig, c: &mut Check) -> Box<dyn GenerationModel> {
    match &cfg.model {
        None => Box::new(NoModel),
        Some(ModelConfig::Scripted { script }) => {
            let Some(bytes) = c.input("model script", script) else { return Box::new(NoModel) };
            match ScriptedModel::from_json(&String::from_utf8_lossy(&bytes)) {
                Ok(m) => Box::new(m),
                Err(e) => {
                    c.error(format!("model script {}: {}", script.display(), e));
                    Box::new(NoModel)
                }
            }
        }
        Some(m @ ModelConfig::Chat { endpoint, model, .. }) => match ChatModel::new(m.live().expect("chat block")) {
            Ok(chat) => {
                c.info(format!("model: {} at {}", model, endpoint));
                Box::new(chat)
            }
            Err(e) => {
                c.error(format!("model: {}", e));
                Box::new(NoModel)
            }
        },
    }
}

fn check_backends(cfg: &PipelineConfig, catalog: &Arc<Catalog>, c: &mut Check) -> Gateway {
    let mut gw = Gateway::new();
    for b in &cfg.backends {
        let built = build_backend(b, catalog.clone()).map_err(|e| e.to_string()).and_then(|backend| {
            if b.kind != BackendKind::Embedded {
                backend.probe()?;
            }
            Ok(backend)
        });
        match built {
            Ok(backend) => {
                c.info(format!("backend {}: {} reachable", b.dialect, backend.name()));
                gw.register(backend, b.timeout());
            }
            Err(e) if b.kind != BackendKind::Embedded => {
                c.warn(format!("backend {}: {}; falling back to the embedded engine", b.dialect, e));
                let fb = BackendConfig { max_workers: b.max_workers, strict_group_by: b.strict_group_by, ..BackendConfig::embedded(b.dialect) };
                let backend = build_backend(&fb, catalog.clone()).expect("embedded backend");
                gw.register(backend, fb.timeout());
            }
            Err(e) => c.error(format!("backend {}: {}", b.dialect, e)),
        }
    }
    if gw.backend(Dialect::Sqlite).is_none() {
        let b = BackendConfig::embedded(Dialect::Sqlite);
        gw.register(build_backend(&b, catalog.clone()).expect("embedded backend"), b.timeout());
    }
    gw
}

fn check_inputs(cfg: &PipelineConfig, gw: &Gateway, c: &mut Check) -> Inputs {
    let mut inputs = Inputs::default();
    if let Some(t) = &cfg.translate {
        inputs.pairs = load_jsonl(c, "translate input", &t.input).unwrap_or_default();
        if let Err(e) = crate::model::check_unique_ids(inputs.pairs.iter().map(|p| p.id.as_str())) {
            c.error(format!("translate input: {}", e));
        }
    }
    if let Some(s) = &cfg.sample {
        if let Some(q) = &s.questions {
            inputs.questions = load_jsonl(c, "sample questions", q).unwrap_or_default();
        }
    }
    if let Some(e) = &cfg.evaluate {
        match benchmark_files(&e.benchmark) {
            Ok(files) if files.is_empty() => c.error(format!("benchmark: no .jsonl files in {}", e.benchmark.display())),
            Ok(files) => {
                for f in files {
                    if c.input("benchmark", &f).is_some() {
                        match Benchmark::load(&f) {
                            Ok(items) => inputs.benchmark.extend(items),
                            Err(err) => c.error(format!("benchmark {}: {}", f.display(), err)),
                        }
                    }
                }
                if let Err(err) = crate::model::check_unique_ids(inputs.benchmark.iter().map(|i| i.id.as_str())) {
                    c.error(format!("benchmark: {}", err));
                }
            }
            Err(err) => c.error(format!("benchmark: cannot read {}: {}", e.benchmark.display(), err)),
        }
        if !e.dialects.is_empty() {
            inputs.benchmark.retain(|i| e.dialects.contains(&i.dialect));
        }
        let mut ds: Vec<Dialect> = inputs.benchmark.iter().map(|i| i.dialect).collect();
        ds.sort();
        ds.dedup();
        for d in ds {
            if gw.backend(d).is_none() {
                c.error(format!("no backend block for dialect {}", d));
            }
        }
        if let Some(o) = &e.outputs {
            inputs.outputs = load_jsonl(c, "model outputs", o);
        }
    }
    inputs
}

impl Runtime {
    /// Checks the config and builds everything a run needs. Diagnostics are
    /// returned either way; the runtime only when none is an error.
    pub fn prepare(cfg: PipelineConfig) -> (Option<Runtime>, Vec<Diagnostic>) {
        let mut c = Check { diags: Vec::new(), hashed: Vec::new() };
        for e in cfg.check() {
            c.error(e);
        }
        c.info(format!("output: {}", cfg.output_dir.display()));
        let templates = check_paths(&cfg, &mut c);
        let catalog = Arc::new(Catalog::new(cfg.paths.fixtures.clone()));
        for id in catalog.ids() {
            if let Some(p) = cfg.paths.fixtures.iter().map(|d| d.join(format!("{}.json", id))).find(|p| p.is_file()) {
                if let Ok(b) = std::fs::read(&p) {
                    c.hashed.push((format!("fixture {}", id), b));
                }
            }
        }
        let model = check_model(&cfg, &mut c);
        let gateway = check_backends(&cfg, &catalog, &mut c);
        let inputs = check_inputs(&cfg, &gateway, &mut c);
        let extra: Vec<(&str, &[u8])> = c.hashed.iter().map(|(l, b)| (l.as_str(), b.as_slice())).collect();
        let digest = config_digest(&cfg, &extra);
        c.info(format!("config digest {}", digest));
        let rt =
            (!c.diags.iter().any(|d| d.severity == Severity::Error)).then(|| Runtime { cfg, catalog, gateway, templates, model, inputs, digest });
        (rt, c.diags)
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn services(&self) -> Services<'_> {
        Services {
            gateway: &self.gateway,
            model: self.model.as_ref(),
            templates: &self.templates,
            catalog: &self.catalog,
            retry: if matches!(self.cfg.model, Some(ModelConfig::Chat { .. })) { RetryPolicy::default() } else { RetryPolicy::none() },
            decoding: self.cfg.decoding,
            workers: self.cfg.workers.max(1),
        }
    }

    /// Stages with a config block, in pipeline order.
    pub fn configured_stages(&self) -> Vec<Stage> {
        Stage::ORDER.into_iter().filter(|s| self.is_configured(*s)).collect()
    }

    fn is_configured(&self, s: Stage) -> bool {
        match s {
            Stage::Translate => self.cfg.translate.is_some(),
            Stage::Sample | Stage::BuildPrefs => self.cfg.sample.is_some(),
            Stage::Evaluate => self.cfg.evaluate.is_some(),
            Stage::Report => true,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.cfg.output_dir.join("manifest.json")
    }

    /// Runs the given stages (all configured ones when `None`) in pipeline
    /// order. Completed stages of a run with the same digest are skipped
    /// unless `force` is set.
    pub fn run(&self, stages: Option<&[Stage]>, force: bool) -> Result<Vec<(Stage, StageStatus)>, PipelineError> {
        let wanted: Vec<Stage> = match stages {
            None => self.configured_stages(),
            Some(list) => {
                let missing: Vec<String> =
                    list.iter().filter(|s| !self.is_configured(**s)).map(|s| format!("stage {} has no config block", s.as_str())).collect();
                if !missing.is_empty() {
                    return Err(PipelineError::Validation(missing));
                }
                Stage::ORDER.into_iter().filter(|s| list.contains(s)).collect()
            }
        };
        let out = &self.cfg.output_dir;
        let io = |e: std::io::Error| PipelineError::Validation(vec![format!("output directory {}: {}", out.display(), e)]);
        std::fs::create_dir_all(out).map_err(io)?;
        let mpath = self.manifest_path();
        let mut manifest = match store::load_manifest(&mpath) {
            Some(m) if m.config_digest == self.digest => m,
            old => {
                if old.is_some() {
                    log::info!("config changed since the last run; starting over");
                    for s in Stage::ORDER {
                        stages::wipe(out, s).map_err(io)?;
                    }
                    let _ = std::fs::remove_file(out.join(stages::EVENTS));
                }
                RunManifest::new(&self.digest[..16], &self.digest, store::now())
            }
        };
        store::save_manifest(&mpath, &manifest).map_err(io)?;

        let mut report = Vec::new();
        for stage in wanted {
            if manifest.is_complete(stage) && !force {
                log::info!("{}: already complete, skipping", stage.as_str());
                report.push((stage, StageStatus::Skipped));
                continue;
            }
            let fail = |e: std::io::Error| PipelineError::stage(stage, e);
            if force {
                stages::wipe(out, stage).map_err(fail)?;
            }
            // Later stages read this one's output, so they start over too.
            for later in Stage::ORDER.into_iter().filter(|s| *s > stage) {
                if manifest.is_complete(later) || out.join(stages::dir_name(later)).exists() {
                    stages::wipe(out, later).map_err(fail)?;
                }
            }
            manifest.completed.retain(|s| *s < stage);
            manifest.stage = Some(stage);
            manifest.updated_at = store::now();
            store::save_manifest(&mpath, &manifest).map_err(fail)?;
            log::info!("{}: starting", stage.as_str());
            let counters = stages::run_stage(self, stage)?;
            for (k, v) in &counters {
                manifest.raise_to(&format!("{}.{}", stage.as_str(), k), *v);
            }
            manifest.mark_complete(stage, store::now());
            store::save_manifest(&mpath, &manifest).map_err(fail)?;
            log::info!("{}: done {:?}", stage.as_str(), counters);
            report.push((stage, StageStatus::Ran(counters)));
        }
        Ok(report)
    }
}
