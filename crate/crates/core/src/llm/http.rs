use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use super::{
    check_embed_inputs, Backend, BackendError, ChatMessage, ChatRequest, Completion, EmbeddingVector, Part,
    Role, Usage,
};

pub const ENV_API_BASE: &str = "DECKAGENT_API_BASE";
pub const ENV_API_KEY: &str = "DECKAGENT_API_KEY";
pub const ENV_CHAT_MODEL: &str = "DECKAGENT_CHAT_MODEL";
pub const ENV_EMBED_MODEL: &str = "DECKAGENT_EMBED_MODEL";

/// Exponential backoff: delay before retry `n` (0-based) is
/// `base_delay * 2^n`, scaled by a uniform factor in `1 ± jitter`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * f64::from(1u32 << retry.min(16));
        let factor = if self.jitter > 0.0 {
            rng.gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * factor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Base URL up to and including the version segment, e.g. `https://api.openai.com/v1`.
    pub api_base: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embed_model: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    /// Seed for retry jitter.
    pub seed: u64,
}

impl HttpConfig {
    pub fn new(api_base: impl Into<String>, chat_model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: None,
            chat_model: chat_model.into(),
            embed_model: String::new(),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            seed: 0,
        }
    }

    /// Reads `DECKAGENT_API_BASE`, `DECKAGENT_API_KEY`, `DECKAGENT_CHAT_MODEL`
    /// and `DECKAGENT_EMBED_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| BackendError::Config(format!("{ENV_API_BASE} is not set")))?;
        let mut cfg = Self::new(base, std::env::var(ENV_CHAT_MODEL).unwrap_or_else(|_| "gpt-4o".into()));
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        cfg.embed_model = std::env::var(ENV_EMBED_MODEL).unwrap_or_default();
        Ok(cfg)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-compatible chat/embeddings client.
///
/// Images travel as inline base64 `image_url` data URLs. Transport errors,
/// 408, 429 and 5xx responses are retried per [`RetryPolicy`]; 401/403 are not.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
    rng: Mutex<StdRng>,
}

enum Attempt {
    Done(Value),
    Retry(BackendError),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            in_flight: Semaphore::new(config.max_in_flight),
            rng: Mutex::new(StdRng::seed_from_u64(config.seed)),
            client,
            config,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.api_base.trim_end_matches('/'), path)
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        match status {
            200..=299 => match serde_json::from_str::<Value>(&text) {
                Ok(v) if v.get("error").is_some_and(|e| !e.is_null()) => Attempt::Fail(BackendError::Provider {
                    status: Some(status),
                    body: text,
                }),
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(BackendError::Provider {
                    status: Some(status),
                    body: format!("unparseable response ({e}): {text}"),
                }),
            },
            401 | 403 => Attempt::Fail(BackendError::Auth { status, body: text }),
            408 | 429 | 500..=599 => Attempt::Retry(BackendError::Provider {
                status: Some(status),
                body: text,
            }),
            _ => Attempt::Fail(BackendError::Provider {
                status: Some(status),
                body: text,
            }),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.url(path);
        let _permit = self.in_flight.acquire();
        let mut retry = 0;
        loop {
            match self.attempt(&url, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if retry >= self.config.retry.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    let delay = {
                        let mut rng = self.rng.lock().expect("rng poisoned");
                        self.config.retry.delay(retry, &mut *rng)
                    };
                    log::warn!("request to {url} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    retry += 1;
                }
            }
        }
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    };
    if m.role != Role::User {
        return json!({"role": role, "content": m.text()});
    }
    let content: Vec<Value> = m
        .parts
        .iter()
        .map(|p| match p {
            Part::Text(t) => json!({"type": "text", "text": t}),
            Part::Image { bytes, media_type } => {
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                json!({"type": "image_url", "image_url": {"url": format!("data:{media_type};base64,{data}")}})
            }
        })
        .collect();
    json!({"role": role, "content": content})
}

/// Request body for `POST /chat/completions`.
pub(crate) fn chat_body(req: &ChatRequest, default_model: &str) -> Value {
    let model = if req.model_name.is_empty() {
        default_model
    } else {
        &req.model_name
    };
    json!({
        "model": model,
        "messages": req.messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

fn provider_shape_error(what: &str, v: &Value) -> BackendError {
    BackendError::Provider {
        status: None,
        body: format!("response missing {what}: {v}"),
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        req.validate()?;
        let v = self.post("chat/completions", &chat_body(req, &self.config.chat_model))?;
        let choice = v
            .pointer("/choices/0")
            .ok_or_else(|| provider_shape_error("choices[0]", &v))?;
        let text = match choice.pointer("/message/content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(parts)) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
            _ => return Err(provider_shape_error("choices[0].message.content", &v)),
        };
        let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
        if truncated {
            log::warn!("completion truncated at {} output tokens", req.max_output_tokens);
        }
        let usage = Usage {
            prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: v
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        };
        Ok(Completion {
            text,
            usage,
            truncated,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        check_embed_inputs(texts)?;
        if self.config.embed_model.is_empty() {
            return Err(BackendError::Config(format!(
                "no embedding model configured (set {ENV_EMBED_MODEL})"
            )));
        }
        let v = self.post(
            "embeddings",
            &json!({"model": self.config.embed_model, "input": texts}),
        )?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| provider_shape_error("data", &v))?;
        let mut rows: Vec<(u64, EmbeddingVector)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| provider_shape_error("data[].embedding", &v))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| provider_shape_error("numeric embedding values", &v))?;
            rows.push((index, EmbeddingVector::new(values)));
        }
        rows.sort_by_key(|(i, _)| *i);
        if rows.len() != texts.len() {
            return Err(BackendError::Provider {
                status: None,
                body: format!("expected {} embeddings, got {}", texts.len(), rows.len()),
            });
        }
        let dim = rows[0].1.dimension();
        if rows.iter().any(|(_, e)| e.dimension() != dim || !e.is_finite()) {
            return Err(BackendError::Provider {
                status: None,
                body: "embeddings have inconsistent dimension or non-finite values".into(),
            });
        }
        Ok(rows.into_iter().map(|(_, e)| e).collect())
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }

    fn chat_model(&self) -> &str {
        &self.config.chat_model
    }

    fn embed_model(&self) -> &str {
        &self.config.embed_model
    }
}
