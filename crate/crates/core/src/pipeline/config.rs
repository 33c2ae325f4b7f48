use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{BackendConfig, RewardPolicy};
use crate::llm::{Decoding, LiveModelConfig};
use crate::model::Dialect;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Scripted {
        script: PathBuf,
    },
    Chat {
        endpoint: String,
        model: String,
        #[serde(default)]
        key_env_var: Option<String>,
        #[serde(default = "default_rpm")]
        rpm: u32,
        #[serde(default = "default_http_timeout")]
        timeout_s: f64,
    },
}

fn default_rpm() -> u32 {
    60
}

fn default_http_timeout() -> f64 {
    120.0
}

impl ModelConfig {
    pub fn live(&self) -> Option<LiveModelConfig> {
        match self {
            ModelConfig::Chat { endpoint, model, key_env_var, rpm, timeout_s } => Some(LiveModelConfig {
                endpoint: endpoint.clone(),
                model: model.clone(),
                key_env_var: key_env_var.clone(),
                rpm: *rpm,
                timeout_s: *timeout_s,
            }),
            ModelConfig::Scripted { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directories holding `<db_id>.json` fixture databases.
    pub fixtures: Vec<PathBuf>,
    /// Overrides for the bundled prompt templates.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateStage {
    /// JSONL of source pairs: id, question, sql, db_id.
    pub input: PathBuf,
    pub targets: Vec<Dialect>,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    /// "none", "identity" or "command:<argv>".
    #[serde(default = "default_prefilter")]
    pub prefilter: String,
    #[serde(default = "exec_only")]
    pub reward_policy: RewardPolicy,
}

fn default_rounds() -> usize {
    3
}

fn default_prefilter() -> String {
    "none".into()
}

fn exec_only() -> RewardPolicy {
    RewardPolicy::ExecOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleStage {
    pub dialect: Dialect,
    #[serde(default = "default_n")]
    pub n: usize,
    /// "auto", "exec-only" or "exec-and-match".
    #[serde(default = "auto")]
    pub reward_policy: String,
    /// Extra questions (JSONL of NLQuestion, optional gold_sql) besides the
    /// translated records for this dialect.
    #[serde(default)]
    pub questions: Option<PathBuf>,
    /// Use the translate stage's verified output as seed questions.
    #[serde(default = "yes")]
    pub from_translate: bool,
    /// Databases to generate new questions for.
    #[serde(default)]
    pub augment_dbs: Vec<String>,
    #[serde(default = "default_k")]
    pub augment_k: usize,
    #[serde(default = "default_ns")]
    pub retention_ns: Vec<usize>,
}

fn default_n() -> usize {
    8
}

fn auto() -> String {
    "auto".into()
}

fn yes() -> bool {
    true
}

fn default_k() -> usize {
    5
}

fn default_ns() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

impl SampleStage {
    pub fn policy(&self) -> Result<Option<RewardPolicy>, ConfigError> {
        match self.reward_policy.as_str() {
            "auto" => Ok(None),
            s => s.parse().map(Some).map_err(ConfigError::Invalid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefsStage {
    pub worst_of: usize,
    pub cross_product: bool,
}

impl Default for PrefsStage {
    fn default() -> Self {
        PrefsStage { worst_of: 8, cross_product: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalStage {
    /// A JSONL file of benchmark items, or a directory of them.
    pub benchmark: PathBuf,
    /// Restrict to these dialects; empty means all.
    #[serde(default)]
    pub dialects: Vec<Dialect>,
    /// JSONL of {id, output}; when absent the model answers each item.
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub translate: Option<TranslateStage>,
    #[serde(default)]
    pub sample: Option<SampleStage>,
    #[serde(default)]
    pub build_prefs: Option<PrefsStage>,
    #[serde(default)]
    pub evaluate: Option<EvalStage>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    4
}

static ENV_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}").unwrap());

/// Replaces `${VAR}` and `${VAR:-default}`; an unset variable without a
/// default is an error.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut missing = None;
    let out = ENV_REF.replace_all(text, |c: &Captures| match (lookup(&c[1]), c.get(2)) {
        (Some(v), _) => v,
        (None, Some(d)) => d.as_str().to_string(),
        (None, None) => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(v) => Err(ConfigError::MissingEnv(v)),
        None => Ok(out.into_owned()),
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let text = interpolate_env(text, |k| std::env::var(k).ok())?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Makes relative paths relative to the config file's directory.
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.paths.fixtures.iter_mut().for_each(fix);
        if let Some(t) = &mut self.paths.templates {
            fix(t);
        }
        if let Some(ModelConfig::Scripted { script }) = &mut self.model {
            fix(script);
        }
        if let Some(t) = &mut self.translate {
            fix(&mut t.input);
        }
        if let Some(s) = &mut self.sample {
            if let Some(q) = &mut s.questions {
                fix(q);
            }
        }
        if let Some(e) = &mut self.evaluate {
            fix(&mut e.benchmark);
            if let Some(o) = &mut e.outputs {
                fix(o);
            }
        }
    }

    pub fn backend_for(&self, d: Dialect) -> Option<&BackendConfig> {
        self.backends.iter().find(|b| b.dialect == d)
    }

    /// Dialects some configured stage needs a backend block for. The source
    /// dialect falls back to the embedded engine and is not listed.
    pub fn required_dialects(&self) -> Vec<Dialect> {
        let mut v = Vec::new();
        if let Some(t) = &self.translate {
            v.extend(t.targets.iter().copied());
        }
        if let Some(s) = &self.sample {
            if s.dialect != Dialect::Sqlite {
                v.push(s.dialect);
            }
        }
        v.sort();
        v.dedup();
        v
    }

    /// Structural checks that need no I/O.
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut seen = Vec::new();
        for b in &self.backends {
            if seen.contains(&b.dialect) {
                errs.push(format!("two backend blocks for {}", b.dialect));
            }
            seen.push(b.dialect);
        }
        for d in self.required_dialects() {
            if self.backend_for(d).is_none() {
                errs.push(format!("no backend block for dialect {}", d));
            }
        }
        let needs_model = self.translate.is_some() || self.sample.is_some() || self.evaluate.as_ref().is_some_and(|e| e.outputs.is_none());
        if needs_model && self.model.is_none() {
            errs.push("a [model] block is required by the configured stages".into());
        }
        if let Some(t) = &self.translate {
            if t.max_rounds == 0 {
                errs.push("translate.max_rounds must be at least 1".into());
            }
            if t.targets.contains(&Dialect::Sqlite) {
                errs.push("translate.targets cannot include sqlite, the source dialect".into());
            }
            if !(t.prefilter == "none" || t.prefilter == "identity" || t.prefilter.starts_with("command:")) {
                errs.push(format!("translate.prefilter must be none, identity or command:<argv>, got '{}'", t.prefilter));
            }
        }
        if let Some(s) = &self.sample {
            if s.n == 0 {
                errs.push("sample.n must be at least 1".into());
            }
            if let Err(e) = s.policy() {
                errs.push(e.to_string());
            }
            if s.retention_ns.contains(&0) {
                errs.push("sample.retention_ns entries must be at least 1".into());
            }
        }
        if let Some(p) = &self.build_prefs {
            if p.worst_of == 0 {
                errs.push("build_prefs.worst_of must be at least 1".into());
            }
        }
        let d = &self.decoding;
        if !(0.0..=1.0).contains(&d.top_p) || !(d.temperature >= 0.0) {
            errs.push("decoding: need 0 <= top_p <= 1 and temperature >= 0".into());
        }
        errs
    }

    /// Canonical JSON of the settings that affect outputs. Worker count and
    /// the output directory are left out.
    pub fn canonical(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("workers");
            o.remove("output_dir");
        }
        serde_json::to_string(&v).expect("json")
    }
}

/// Hex SHA-256 over the canonical config plus the bytes of every input it
/// names, so editing a script or dataset invalidates completed stages.
pub fn config_digest(cfg: &PipelineConfig, extra: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    h.update(cfg.canonical().as_bytes());
    for (label, bytes) in extra {
        h.update([0u8]);
        h.update(label.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}
