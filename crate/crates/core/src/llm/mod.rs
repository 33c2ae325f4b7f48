//! The generation model: requests, the scripted test double, the HTTP chat
//! client, prompt templates and SQL extraction.

mod extract;
mod http;
mod prompt;
mod scripted;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_sql, ExtractError};
pub use http::{ChatModel, LiveModelConfig, RateLimiter};
pub use prompt::{
    columns_text, render_question_gen_prompt, render_text2sql_prompt, render_translation_prompt, schema_text, PromptError, Templates, TEMPLATE_NAMES,
};
pub use scripted::{prompt_digest, Matcher, Response, Rule, ScriptFile, ScriptedModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script underrun: no completions left for rule {rule} ({matcher})")]
    ScriptUnderrun { rule: usize, matcher: String },
    #[error("no script rule matches prompt {digest}")]
    NoScriptMatch { digest: String },
    #[error("transport error: {message}")]
    Transport { message: String, transient: bool },
    #[error("model returned {got} completions, expected {expected}")]
    WrongCount { got: usize, expected: usize },
    #[error("model offers no scores")]
    ScoreUnavailable,
    #[error("no score for question/sql pair")]
    MissingScore,
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transport { transient: true, .. })
    }
}

/// Sampling parameters shared by every request of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding { temperature: 0.7, top_p: 0.9, top_k: 50, max_tokens: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    /// Fixes sampling for models that honour it; the scripted model always does.
    pub seed: Option<u64>,
}

impl GenRequest {
    pub fn new(prompt: impl Into<String>, n: usize) -> Self {
        Self::with_decoding(prompt, n, &Decoding::default())
    }

    pub fn with_decoding(prompt: impl Into<String>, n: usize, d: &Decoding) -> Self {
        GenRequest {
            prompt: prompt.into(),
            n,
            temperature: d.temperature,
            top_p: d.top_p,
            top_k: d.top_k,
            max_tokens: d.max_tokens,
            stop: Vec::new(),
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.n == 0 {
            return Err(LlmError::InvalidRequest("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(LlmError::InvalidRequest(format!("top_p must be in [0, 1], got {}", self.top_p)));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

pub trait GenerationModel: Send + Sync {
    fn id(&self) -> &str;

    /// Exactly `req.n` completions.
    fn generate(&self, req: &GenRequest) -> Result<Vec<String>, LlmError>;

    /// Log-probability surrogate of `sql` given `question`.
    fn score(&self, _question: &str, _sql: &str) -> Result<f64, LlmError> {
        Err(LlmError::ScoreUnavailable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { max_attempts: 1, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1 << attempt.min(16)).min(self.max_delay)
    }
}

/// Validates, calls the model and retries transient transport failures with
/// exponential backoff.
pub fn generate(model: &dyn GenerationModel, req: &GenRequest, retry: &RetryPolicy) -> Result<Vec<String>, LlmError> {
    req.validate()?;
    let mut attempt = 0;
    loop {
        match model.generate(req) {
            Ok(out) if out.len() == req.n => return Ok(out),
            Ok(out) => return Err(LlmError::WrongCount { got: out.len(), expected: req.n }),
            Err(e) if e.is_transient() && attempt + 1 < retry.max_attempts => {
                log::warn!("{}: {} (retrying)", model.id(), e);
                thread::sleep(retry.delay(attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        fails: u32,
        calls: AtomicU32,
    }

    impl GenerationModel for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn generate(&self, req: &GenRequest) -> Result<Vec<String>, LlmError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fails {
                return Err(LlmError::Transport { message: "503".into(), transient: true });
            }
            Ok(vec!["SELECT 1".into(); req.n])
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(2) }
    }

    #[test]
    fn retries_transient_failures_up_to_the_cap() {
        let m = Flaky { fails: 2, calls: AtomicU32::new(0) };
        assert_eq!(generate(&m, &GenRequest::new("p", 2), &fast()).unwrap().len(), 2);
        let m = Flaky { fails: 3, calls: AtomicU32::new(0) };
        assert!(generate(&m, &GenRequest::new("p", 1), &fast()).unwrap_err().is_transient());
        assert_eq!(m.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn request_validation() {
        let m = Flaky { fails: 0, calls: AtomicU32::new(0) };
        assert!(matches!(generate(&m, &GenRequest::new("p", 0), &fast()), Err(LlmError::InvalidRequest(_))));
        let mut r = GenRequest::new("p", 1);
        r.top_p = 1.5;
        assert!(r.validate().is_err());
        let d = GenRequest::new("p", 1);
        assert_eq!((d.temperature, d.top_p, d.top_k), (0.7, 0.9, 50));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_secs(2));
        assert_eq!(p.delay(9), Duration::from_secs(8));
    }
}
