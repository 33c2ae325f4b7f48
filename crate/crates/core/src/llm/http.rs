use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{GenRequest, GenerationModel, LlmError};

/// Token bucket shared by every caller of one model.
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32, burst: u32) -> Self {
        let capacity = burst.max(1) as f64;
        RateLimiter { capacity, per_sec: rpm.max(1) as f64 / 60.0, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes a token if one is available at `now`; otherwise how long to wait.
    pub fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut st = self.state.lock().unwrap();
        let (tokens, last) = *st;
        let refill = now.saturating_duration_since(last).as_secs_f64() * self.per_sec;
        let tokens = (tokens + refill).min(self.capacity);
        if tokens >= 1.0 {
            *st = (tokens - 1.0, now.max(last));
            Ok(())
        } else {
            *st = (tokens, now.max(last));
            Err(Duration::from_secs_f64((1.0 - tokens) / self.per_sec))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire_at(Instant::now()) {
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LiveModelConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub key_env_var: Option<String>,
    #[serde(default = "default_rpm")]
    pub rpm: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_rpm() -> u32 {
    60
}

fn default_timeout() -> f64 {
    120.0
}

/// Chat-completion client: one POST per request, `n` choices per response.
pub struct ChatModel {
    id: String,
    cfg: LiveModelConfig,
    key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl ChatModel {
    pub fn new(cfg: LiveModelConfig) -> Result<Self, LlmError> {
        let key = match &cfg.key_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::InvalidRequest(format!("environment variable {} is not set", var)))?),
            None => None,
        };
        if !(cfg.timeout_s > 0.0) {
            return Err(LlmError::InvalidRequest("timeout_s must be positive".into()));
        }
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s))).http_status_as_error(false).build().into();
        Ok(ChatModel { id: format!("chat:{}", cfg.model), limiter: RateLimiter::per_minute(cfg.rpm, 1), key, agent, cfg })
    }

    fn body(&self, req: &GenRequest) -> Value {
        let mut b = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": req.n,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        });
        if !req.stop.is_empty() {
            b["stop"] = json!(req.stop);
        }
        if let Some(s) = req.seed {
            b["seed"] = json!(s);
        }
        b
    }
}

fn choices(v: &Value) -> Result<Vec<String>, LlmError> {
    let arr = v["choices"].as_array().ok_or_else(|| LlmError::Transport { message: "response has no choices array".into(), transient: false })?;
    Ok(arr.iter().map(|c| c["message"]["content"].as_str().unwrap_or_default().to_string()).collect())
}

impl GenerationModel for ChatModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<String>, LlmError> {
        self.limiter.acquire();
        let mut call = self.agent.post(&self.cfg.endpoint);
        if let Some(k) = &self.key {
            call = call.header("Authorization", &format!("Bearer {}", k));
        }
        let mut resp = call.send_json(self.body(req)).map_err(|e| LlmError::Transport { message: e.to_string(), transient: true })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| LlmError::Transport { message: e.to_string(), transient: true })?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Transport {
                message: format!("HTTP {}: {}", status, text.chars().take(300).collect::<String>()),
                transient: status == 429 || status >= 500,
            });
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Transport { message: format!("bad response body: {}", e), transient: false })?;
        choices(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{generate, RetryPolicy};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    #[test]
    fn bucket_refills_at_rate() {
        let l = RateLimiter::per_minute(60, 1);
        let t0 = Instant::now();
        assert!(l.try_acquire_at(t0).is_ok());
        let wait = l.try_acquire_at(t0).unwrap_err();
        assert!((wait.as_secs_f64() - 1.0).abs() < 1e-6);
        assert!(l.try_acquire_at(t0 + Duration::from_millis(500)).is_err());
        assert!(l.try_acquire_at(t0 + Duration::from_millis(1001)).is_ok());
    }

    fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let h = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (s, _) = listener.accept().unwrap();
                let mut r = BufReader::new(s.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    if line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                r.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut w = s;
                write!(
                    w,
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    status,
                    body.len(),
                    body
                )
                .unwrap();
            }
            bodies
        });
        (url, h)
    }

    #[test]
    fn posts_chat_request_and_retries_503() {
        let ok = r#"{"choices":[{"message":{"content":"SELECT 1"}},{"message":{"content":"SELECT 2"}}]}"#;
        let (url, h) = serve(vec![(503, "{}".into()), (200, ok.into())]);
        let m = ChatModel::new(LiveModelConfig { endpoint: url, model: "m".into(), key_env_var: None, rpm: 6000, timeout_s: 5.0 }).unwrap();
        let retry = RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) };
        let out = generate(&m, &GenRequest::new("hello", 2).with_seed(3), &retry).unwrap();
        assert_eq!(out, vec!["SELECT 1", "SELECT 2"]);
        let bodies = h.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["n"], 2);
        assert_eq!(sent["temperature"], 0.7);
        assert_eq!(sent["seed"], 3);
        assert_eq!(sent["messages"][0]["content"], "hello");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, h) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let m = ChatModel::new(LiveModelConfig { endpoint: url, model: "m".into(), key_env_var: None, rpm: 6000, timeout_s: 5.0 }).unwrap();
        let e = generate(&m, &GenRequest::new("x", 1), &RetryPolicy::default()).unwrap_err();
        assert!(!e.is_transient(), "{}", e);
        h.join().unwrap();
    }
}
