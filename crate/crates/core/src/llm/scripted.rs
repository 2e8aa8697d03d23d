use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_embed_inputs, Backend, BackendError, ChatRequest, Completion, EmbeddingVector, Usage};

/// One scripted reply.
///
/// Records with `match` are routed: they answer any request whose prompt text
/// contains the pattern, and are reusable up to `times` uses (unbounded when
/// absent). Records without `match` form a FIFO queue consumed in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Fail with this provider error instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl ScriptRecord {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            response: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn routed(pattern: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            pattern: Some(pattern.into()),
            response: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn failing(pattern: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            pattern: Some(pattern.into()),
            error: Some(error.into()),
            ..Self::default()
        }
    }

    pub fn limited(mut self, times: usize) -> Self {
        self.times = Some(times);
        self
    }
}

fn default_dim() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub chat: Vec<ScriptRecord>,
    /// Exact-text embedding overrides.
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f32>>,
    /// Dimension of the hashed bag-of-words fallback embedding.
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

impl Default for Script {
    fn default() -> Self {
        Self {
            chat: Vec::new(),
            embeddings: BTreeMap::new(),
            embedding_dim: default_dim(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Records(Vec<ScriptRecord>),
    Full(Script),
}

impl Script {
    pub fn from_records(chat: Vec<ScriptRecord>) -> Self {
        Self {
            chat,
            ..Self::default()
        }
    }

    /// Parses either a bare array of records or a full script object.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        match serde_json::from_str::<ScriptFile>(text) {
            Ok(ScriptFile::Records(chat)) => Ok(Self::from_records(chat)),
            Ok(ScriptFile::Full(s)) => Ok(s),
            Err(e) => Err(BackendError::Config(format!("invalid script: {e}"))),
        }
    }
}

struct State {
    queue: VecDeque<ScriptRecord>,
    uses: Vec<usize>,
}

/// Offline backend replaying a [`Script`].
pub struct ScriptedBackend {
    routed: Vec<ScriptRecord>,
    embeddings: BTreeMap<String, Vec<f32>>,
    dim: usize,
    max_in_flight: usize,
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let (routed, queue): (Vec<_>, Vec<_>) =
            script.chat.into_iter().partition(|r| r.pattern.is_some());
        let uses = vec![0; routed.len()];
        Self {
            routed,
            embeddings: script.embeddings,
            dim: script.embedding_dim.max(1),
            max_in_flight: 4,
            state: Mutex::new(State {
                queue: queue.into(),
                uses,
            }),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read script {}: {e}", path.display())))?;
        Ok(Self::new(Script::from_json(&text)?))
    }

    /// FIFO-only backend answering with `replies` in order.
    pub fn queue<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(Script::from_records(
            replies.into_iter().map(ScriptRecord::reply).collect(),
        ))
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn pick(&self, prompt: &str) -> Result<ScriptRecord, BackendError> {
        let mut state = self.state.lock().expect("script state poisoned");
        for (i, rec) in self.routed.iter().enumerate() {
            let pattern = rec.pattern.as_deref().unwrap_or_default();
            let available = rec.times.is_none_or(|t| state.uses[i] < t);
            if available && prompt.contains(pattern) {
                state.uses[i] += 1;
                return Ok(rec.clone());
            }
        }
        state.queue.pop_front().ok_or(BackendError::ScriptExhausted)
    }

    fn hashed_embedding(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for token in crate::retrieval::tokenize(text) {
            let h = fnv1a(token.as_bytes());
            v[(h % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        req.validate()?;
        let prompt = req.prompt_text();
        let rec = self.pick(&prompt)?;
        if let Some(err) = rec.error {
            return Err(BackendError::Provider {
                status: None,
                body: err,
            });
        }
        let text = rec.response.unwrap_or_default();
        Ok(Completion {
            usage: Usage {
                prompt_tokens: prompt.split_whitespace().count() as u64,
                completion_tokens: text.split_whitespace().count() as u64,
            },
            text,
            truncated: rec.truncated,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        check_embed_inputs(texts)?;
        texts
            .iter()
            .map(|t| {
                let values = match self.embeddings.get(t) {
                    Some(v) if v.len() == self.dim => v.clone(),
                    Some(v) => {
                        return Err(BackendError::Config(format!(
                            "scripted embedding for {t:?} has dimension {} but embedding_dim is {}",
                            v.len(),
                            self.dim
                        )))
                    }
                    None => self.hashed_embedding(t),
                };
                Ok(EmbeddingVector::new(values))
            })
            .collect()
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn chat_model(&self) -> &str {
        "scripted"
    }

    fn embed_model(&self) -> &str {
        "scripted-hash"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user_text(text)])
    }

    #[test]
    fn queue_replies_in_order_then_exhausts() {
        let b = ScriptedBackend::queue(["A"]);
        assert_eq!(b.complete(&req("x")).unwrap().text, "A");
        assert_eq!(b.complete(&req("x")), Err(BackendError::ScriptExhausted));
    }

    #[test]
    fn routed_records_are_reusable() {
        let b = ScriptedBackend::new(Script::from_records(vec![ScriptRecord::routed("weather", "sunny")]));
        let first = b.complete(&req("what is the weather")).unwrap();
        let second = b.complete(&req("what is the weather")).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.text, "sunny");
    }

    #[test]
    fn limited_record_falls_through() {
        let b = ScriptedBackend::new(Script::from_records(vec![
            ScriptRecord::failing("page 2", "boom").limited(1),
            ScriptRecord::routed("page 2", "fine"),
        ]));
        assert!(b.complete(&req("page 2")).is_err());
        assert_eq!(b.complete(&req("page 2")).unwrap().text, "fine");
    }

    #[test]
    fn scripted_basis_embeddings() {
        let mut script = Script { embedding_dim: 2, ..Script::default() };
        script.embeddings.insert("a".into(), vec![1.0, 0.0]);
        script.embeddings.insert("b".into(), vec![0.0, 1.0]);
        let b = ScriptedBackend::new(script);
        let out = b.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(out[0].values, vec![1.0, 0.0]);
        assert_eq!(out[1].values, vec![0.0, 1.0]);
    }

    #[test]
    fn duplicate_inputs_embed_identically() {
        let b = ScriptedBackend::new(Script::default());
        let out = b.embed(&["same text".into(), "same text".into()]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0].dimension(), 64);
    }

    #[test]
    fn empty_text_rejected() {
        let b = ScriptedBackend::new(Script::default());
        let err = b.embed(&["".into()]).unwrap_err();
        assert_eq!(err.to_string(), "empty text");
    }

    #[test]
    fn script_file_accepts_bare_array() {
        let s = Script::from_json(r#"[{"response": "A"}, {"match": "x", "response": "B"}]"#).unwrap();
        assert_eq!(s.chat.len(), 2);
        assert_eq!(s.chat[1].pattern.as_deref(), Some("x"));
    }
}
