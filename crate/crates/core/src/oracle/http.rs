//! OpenAI-compatible completions client that asks for one token with logprobs.
//!
//! Text-only prompts go to `POST {base}/completions`; prompts with image
//! attachments go to `POST {base}/chat/completions` with `image_url` content
//! parts. Both ask for `max_tokens = 1` and the top-k alternatives of the
//! first token, and both response shapes are accepted.

use super::{ModelRole, Oracle, OracleError, OracleRequest, OracleResponse, SurfaceForms};
use serde_json::{json, Value};
use std::sync::{Condvar, Mutex};
use std::time::Duration;
use tracing::{debug, warn};

#[derive(Debug, Clone)]
pub struct HttpOracleConfig {
    /// e.g. `http://localhost:8000/v1`
    pub base_url: String,
    pub api_key: Option<String>,
    pub text_model: String,
    pub vision_model: String,
    pub top_logprobs: u32,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub surface_forms: SurfaceForms,
}

impl HttpOracleConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpOracleConfig {
            base_url: base_url.into(),
            api_key: None,
            text_model: "mistral-7b-openorca".into(),
            vision_model: "llava-1.5-7b".into(),
            top_logprobs: 20,
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            timeout: Duration::from_secs(60),
            max_in_flight: 8,
            surface_forms: SurfaceForms::default(),
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.gate.cv.notify_one();
    }
}

enum Attempt {
    Transient(String),
    Fatal(OracleError),
}

pub struct HttpOracle {
    config: HttpOracleConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self, OracleError> {
        config.surface_forms.validate()?;
        if config.max_attempts == 0 {
            return Err(OracleError::Config("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| OracleError::Config(format!("http client: {e}")))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(HttpOracle { config, client, gate })
    }

    fn model(&self, role: ModelRole) -> &str {
        match role {
            ModelRole::Text => &self.config.text_model,
            ModelRole::Vision => &self.config.vision_model,
        }
    }

    fn build_body(&self, req: &OracleRequest) -> (String, Value) {
        let base = self.config.base_url.trim_end_matches('/');
        let model = self.model(req.role);
        if req.prompt.attachments.is_empty() {
            let body = json!({
                "model": model,
                "prompt": req.prompt.text,
                "max_tokens": 1,
                "temperature": 0.0,
                "logprobs": self.config.top_logprobs,
            });
            (format!("{base}/completions"), body)
        } else {
            let mut content = vec![json!({"type": "text", "text": req.prompt.text})];
            content.extend(
                req.prompt
                    .attachments
                    .iter()
                    .map(|uri| json!({"type": "image_url", "image_url": {"url": uri}})),
            );
            let body = json!({
                "model": model,
                "messages": [{"role": "user", "content": content}],
                "max_tokens": 1,
                "temperature": 0.0,
                "logprobs": true,
                "top_logprobs": self.config.top_logprobs,
            });
            (format!("{base}/chat/completions"), body)
        }
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, Attempt> {
        let mut rb = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(OracleError::Protocol(format!("HTTP {status}: {text}"))));
        }
        resp.json::<Value>()
            .map_err(|e| Attempt::Fatal(OracleError::Protocol(format!("response is not JSON: {e}"))))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32 << (attempt - 1).min(16);
        (self.config.initial_backoff * factor).min(self.config.max_backoff)
    }
}

impl Oracle for HttpOracle {
    fn query(&self, req: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let (url, body) = self.build_body(req);
        let _slot = self.gate.acquire();
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            let started = std::time::Instant::now();
            match self.attempt(&url, &body) {
                Ok(json) => {
                    debug!(
                        task = req.task.as_str(),
                        claim_id = %req.claim_id,
                        candidate_id = %req.candidate_id,
                        attempt,
                        elapsed_ms = started.elapsed().as_millis() as u64,
                        "oracle response"
                    );
                    let (token, prob, top) = parse_first_token(&json)?;
                    return OracleResponse::from_token_probs(&token, prob, &top, &req.classes, &self.config.surface_forms);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    warn!(
                        task = req.task.as_str(),
                        claim_id = %req.claim_id,
                        candidate_id = %req.candidate_id,
                        attempt,
                        error = %msg,
                        "oracle request failed"
                    );
                    last = msg;
                    if attempt < self.config.max_attempts {
                        std::thread::sleep(self.backoff(attempt));
                    }
                }
            }
        }
        Err(OracleError::Transport {
            attempts: self.config.max_attempts,
            message: last,
        })
    }
}

type FirstToken = (String, f64, Vec<(String, f64)>);

fn missing(what: &str) -> OracleError {
    OracleError::Protocol(format!("response has no {what}"))
}

/// Extracts the first generated token, its probability and the top-k
/// alternatives from either a completions or a chat completions response.
pub(crate) fn parse_first_token(json: &Value) -> Result<FirstToken, OracleError> {
    let logprobs = json
        .pointer("/choices/0/logprobs")
        .filter(|v| !v.is_null())
        .ok_or_else(|| missing("choices[0].logprobs"))?;

    // chat: {"content": [{"token", "logprob", "top_logprobs": [{"token", "logprob"}]}]}
    if let Some(content) = logprobs.get("content") {
        let first = content.get(0).ok_or_else(|| missing("logprobs.content[0]"))?;
        let token = first.get("token").and_then(Value::as_str).ok_or_else(|| missing("token"))?;
        let lp = first.get("logprob").and_then(Value::as_f64).ok_or_else(|| missing("logprob"))?;
        let mut top = Vec::new();
        for alt in first.get("top_logprobs").and_then(Value::as_array).into_iter().flatten() {
            let t = alt.get("token").and_then(Value::as_str).ok_or_else(|| missing("top_logprobs[].token"))?;
            let l = alt
                .get("logprob")
                .and_then(Value::as_f64)
                .ok_or_else(|| missing("top_logprobs[].logprob"))?;
            top.push((t.to_string(), l.exp()));
        }
        return Ok((token.to_string(), lp.exp(), top));
    }

    // completions: {"tokens": [...], "token_logprobs": [...], "top_logprobs": [{tok: lp}]}
    let token = logprobs
        .pointer("/tokens/0")
        .and_then(Value::as_str)
        .ok_or_else(|| missing("logprobs.tokens[0]"))?;
    let lp = logprobs
        .pointer("/token_logprobs/0")
        .and_then(Value::as_f64)
        .ok_or_else(|| missing("logprobs.token_logprobs[0]"))?;
    let mut top = Vec::new();
    if let Some(map) = logprobs.pointer("/top_logprobs/0").and_then(Value::as_object) {
        for (t, l) in map {
            let l = l.as_f64().ok_or_else(|| missing("numeric top_logprobs entry"))?;
            top.push((t.clone(), l.exp()));
        }
    }
    Ok((token.to_string(), lp.exp(), top))
}
