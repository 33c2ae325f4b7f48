use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenRequest, GenerationModel, LlmError};
use crate::model::FormatError;

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    Any,
    Contains(String),
    /// Every substring must occur.
    All(Vec<String>),
    /// Hex SHA-256 of the full prompt.
    Sha256(String),
}

impl Matcher {
    fn matches(&self, prompt: &str, digest: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::All(v) => v.iter().all(|s| prompt.contains(s.as_str())),
            Matcher::Sha256(h) => h.eq_ignore_ascii_case(digest),
        }
    }

    fn describe(&self) -> String {
        match self {
            Matcher::Any => "any".into(),
            Matcher::Contains(s) => format!("contains {:?}", s),
            Matcher::All(v) => format!("all of {:?}", v),
            Matcher::Sha256(h) => format!("sha256 {}", h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    /// One completion list per call, consumed in order.
    Canned(VecDeque<Vec<String>>),
    /// Every sample is `valid` with probability `p`, else `invalid`. Never runs out.
    Bernoulli { p: f64, valid: String, invalid: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(rename = "match", default = "any")]
    pub matcher: Matcher,
    #[serde(flatten)]
    pub response: Response,
}

fn any() -> Matcher {
    Matcher::Any
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreEntry {
    question: String,
    sql: String,
    score: f64,
}

/// On-disk script: `{"id": .., "rules": [..], "scores": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    scores: Vec<ScoreEntry>,
}

fn default_id() -> String {
    "scripted".into()
}

/// Deterministic stand-in for a generation model. Calls are served by the
/// first matching rule that still has completions; an exhausted script is an
/// error, never a silent replay.
pub struct ScriptedModel {
    id: String,
    rules: Mutex<Vec<Rule>>,
    scores: HashMap<(String, String), f64>,
}

impl ScriptedModel {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedModel { id: id.into(), rules: Mutex::new(Vec::new()), scores: HashMap::new() }
    }

    pub fn from_script(f: ScriptFile) -> Self {
        let mut m = ScriptedModel::new(f.id);
        *m.rules.get_mut().unwrap() = f.rules;
        for s in f.scores {
            m.scores.insert((s.question, s.sql), s.score);
        }
        m
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let f: ScriptFile = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
        for r in &f.rules {
            if let Response::Bernoulli { p, .. } = r.response {
                if !(0.0..=1.0).contains(&p) {
                    return Err(FormatError::InvalidField { field: "p", reason: format!("{} not in [0, 1]", p) });
                }
            }
        }
        Ok(Self::from_script(f))
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn rule(self, matcher: Matcher, response: Response) -> Self {
        self.rules.lock().unwrap().push(Rule { matcher, response });
        self
    }

    /// Queues one call's completions behind `matcher`, extending its rule if
    /// the last rule has the same matcher.
    pub fn push(self, matcher: Matcher, completions: Vec<String>) -> Self {
        {
            let mut rules = self.rules.lock().unwrap();
            match rules.last_mut() {
                Some(Rule { matcher: m, response: Response::Canned(q) }) if *m == matcher => q.push_back(completions),
                _ => rules.push(Rule { matcher, response: Response::Canned(VecDeque::from([completions])) }),
            }
        }
        self
    }

    pub fn with_score(mut self, question: &str, sql: &str, score: f64) -> Self {
        self.scores.insert((question.to_string(), sql.to_string()), score);
        self
    }

    /// Calls left on canned rules; Bernoulli rules are not counted.
    pub fn remaining(&self) -> usize {
        self.rules
            .lock()
            .unwrap()
            .iter()
            .map(|r| match &r.response {
                Response::Canned(q) => q.len(),
                Response::Bernoulli { .. } => 0,
            })
            .sum()
    }
}

fn bernoulli(p: f64, valid: &str, invalid: &str, req: &GenRequest, digest: &str) -> Vec<String> {
    let mut seed = [0u8; 32];
    let mut h = Sha256::new();
    h.update(digest.as_bytes());
    h.update(req.seed.unwrap_or(0).to_le_bytes());
    seed.copy_from_slice(&h.finalize());
    let mut rng = ChaCha8Rng::from_seed(seed);
    (0..req.n).map(|_| if rng.random::<f64>() < p { valid.to_string() } else { invalid.to_string() }).collect()
}

impl GenerationModel for ScriptedModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<String>, LlmError> {
        let digest = prompt_digest(&req.prompt);
        let mut rules = self.rules.lock().unwrap();
        let mut exhausted = None;
        for (i, rule) in rules.iter_mut().enumerate() {
            if !rule.matcher.matches(&req.prompt, &digest) {
                continue;
            }
            match &mut rule.response {
                Response::Bernoulli { p, valid, invalid } => return Ok(bernoulli(*p, valid, invalid, req, &digest)),
                Response::Canned(q) => match q.pop_front() {
                    Some(c) if c.len() >= req.n => return Ok(c.into_iter().take(req.n).collect()),
                    Some(c) => return Err(LlmError::WrongCount { got: c.len(), expected: req.n }),
                    None => {
                        exhausted.get_or_insert((i, rule.matcher.describe()));
                    }
                },
            }
        }
        Err(match exhausted {
            Some((rule, matcher)) => LlmError::ScriptUnderrun { rule, matcher },
            None => LlmError::NoScriptMatch { digest },
        })
    }

    fn score(&self, question: &str, sql: &str) -> Result<f64, LlmError> {
        if self.scores.is_empty() {
            return Err(LlmError::ScoreUnavailable);
        }
        self.scores.get(&(question.to_string(), sql.to_string())).copied().ok_or(LlmError::MissingScore)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn canned_in_order_then_underrun() {
        let m = ScriptedModel::new("t").push(Matcher::Contains("q1".into()), s(&["a", "b"])).push(Matcher::Contains("q1".into()), s(&["c", "d"]));
        let r = GenRequest::new("about q1", 2);
        assert_eq!(m.generate(&r).unwrap(), s(&["a", "b"]));
        assert_eq!(m.generate(&r).unwrap(), s(&["c", "d"]));
        assert!(matches!(m.generate(&r), Err(LlmError::ScriptUnderrun { rule: 0, .. })));
        assert!(matches!(m.generate(&GenRequest::new("other", 1)), Err(LlmError::NoScriptMatch { .. })));
        let m = ScriptedModel::new("t").push(Matcher::All(s(&["q1", "MySQL"])), s(&["x"]));
        assert!(m.generate(&GenRequest::new("q1 PostgreSQL", 1)).is_err());
        assert_eq!(m.generate(&GenRequest::new("q1 MySQL", 1)).unwrap(), s(&["x"]));
    }

    #[test]
    fn hash_matcher() {
        let m = ScriptedModel::new("t").push(Matcher::Sha256(prompt_digest("exact")), s(&["x"]));
        assert!(m.generate(&GenRequest::new("exact ", 1)).is_err());
        assert_eq!(m.generate(&GenRequest::new("exact", 1)).unwrap(), s(&["x"]));
    }

    #[test]
    fn bernoulli_is_seeded() {
        let m = ScriptedModel::new("t").rule(Matcher::Any, Response::Bernoulli { p: 0.3, valid: "v".into(), invalid: "i".into() });
        let r = GenRequest::new("p", 64).with_seed(7);
        let a = m.generate(&r).unwrap();
        assert_eq!(a, m.generate(&r).unwrap());
        assert_ne!(a, m.generate(&r.clone().with_seed(8)).unwrap());
        let v = a.iter().filter(|x| *x == "v").count();
        assert!(v > 5 && v < 40, "{}", v);
    }

    #[test]
    fn script_file_round_trip() {
        let json = r#"{"id":"demo","rules":[{"match":{"contains":"x"},"canned":[["SELECT 1"]]},{"bernoulli":{"p":0.5,"valid":"a","invalid":"b"}}],
                       "scores":[{"question":"q","sql":"SELECT 1","score":-1.5}]}"#;
        let m = ScriptedModel::from_json(json).unwrap();
        assert_eq!(m.id(), "demo");
        assert_eq!(m.generate(&GenRequest::new("x", 1)).unwrap(), s(&["SELECT 1"]));
        assert_eq!(m.generate(&GenRequest::new("x", 1)).unwrap().len(), 1);
        assert_eq!(m.score("q", "SELECT 1"), Ok(-1.5));
        assert_eq!(m.score("q", "SELECT 2"), Err(LlmError::MissingScore));
        assert!(ScriptedModel::from_json(r#"{"rules":[{"bernoulli":{"p":2,"valid":"a","invalid":"b"}}]}"#).is_err());
    }
}
