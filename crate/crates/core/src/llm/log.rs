use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, Completion, Part, Role};
use crate::util::{file_safe, sha256_hex, write_json_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LoggedPart {
    Text { text: String },
    Image { media_type: String, sha256: String, bytes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedMessage {
    pub role: Role,
    pub parts: Vec<LoggedPart>,
}

/// A persisted request/response pair. Image bytes are replaced by their hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub model: String,
    pub temperature: f32,
    pub messages: Vec<LoggedMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub truncated: bool,
}

impl PromptRecord {
    /// All text parts of the logged request.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| m.parts.iter())
            .filter_map(|p| match p {
                LoggedPart::Text { text } => Some(text.as_str()),
                LoggedPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.messages
            .iter()
            .flat_map(|m| m.parts.iter())
            .filter(|p| matches!(p, LoggedPart::Image { .. }))
            .count()
    }
}

fn log_request(id: &str, model: &str, req: &ChatRequest) -> PromptRecord {
    PromptRecord {
        id: id.to_string(),
        model: model.to_string(),
        temperature: req.temperature,
        messages: req
            .messages
            .iter()
            .map(|m| LoggedMessage {
                role: m.role,
                parts: m
                    .parts
                    .iter()
                    .map(|p| match p {
                        Part::Text(t) => LoggedPart::Text { text: t.clone() },
                        Part::Image { bytes, media_type } => LoggedPart::Image {
                            media_type: media_type.clone(),
                            sha256: sha256_hex(bytes),
                            bytes: bytes.len(),
                        },
                    })
                    .collect(),
            })
            .collect(),
        response: None,
        error: None,
        truncated: false,
    }
}

/// Thread-safe record of every model call, keyed by a caller-chosen stable id.
///
/// Ids are chosen from the pipeline position (`page-0003`, `element-e7`, ...)
/// so the log is identical whatever order concurrent calls complete in.
#[derive(Debug, Default)]
pub struct PromptLog {
    records: Mutex<BTreeMap<String, PromptRecord>>,
}

impl PromptLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sends `req` through `backend` and records both sides under `id`.
    pub fn call(&self, backend: &dyn Backend, id: &str, req: &ChatRequest) -> Result<Completion, BackendError> {
        let model = if req.model_name.is_empty() {
            backend.chat_model()
        } else {
            &req.model_name
        };
        let mut rec = log_request(id, model, req);
        let result = backend.complete(req);
        match &result {
            Ok(c) => {
                rec.response = Some(c.text.clone());
                rec.truncated = c.truncated;
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        self.records
            .lock()
            .expect("prompt log poisoned")
            .insert(id.to_string(), rec);
        result
    }

    pub fn get(&self, id: &str) -> Option<PromptRecord> {
        self.records.lock().expect("prompt log poisoned").get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.lock().expect("prompt log poisoned").keys().cloned().collect()
    }

    pub fn records(&self) -> Vec<PromptRecord> {
        self.records.lock().expect("prompt log poisoned").values().cloned().collect()
    }

    /// Writes one `<id>.json` per record into `dir`.
    pub fn save_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for rec in self.records() {
            write_json_atomic(&dir.join(format!("{}.json", file_safe(&rec.id))), &rec)?;
        }
        Ok(())
    }

    /// Loads every record previously written by [`PromptLog::save_dir`].
    pub fn load_dir(dir: &Path) -> std::io::Result<Vec<PromptRecord>> {
        let mut out = Vec::new();
        if !dir.is_dir() {
            return Ok(out);
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p)?;
            out.push(serde_json::from_str(&text).map_err(std::io::Error::other)?);
        }
        Ok(out)
    }
}
