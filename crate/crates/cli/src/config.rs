//! Settings resolution: flags, then `DECKAGENT_*` variables, then the TOML
//! file, then built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use deckagent_core::llm::{HttpConfig, ScriptedBackend};
use deckagent_core::retrieval::{DEFAULT_ELEMENT_K, DEFAULT_PAGE_K, DEFAULT_SUBQUERY_CAP};
use deckagent_core::{AnswerConfig, Backend, Bm25Params, HttpBackend, IndexMode, Retriever, DEFAULT_TAU};
use serde::Deserialize;

use crate::error::{input, CliError};

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalOpts {
    /// TOML config file.
    #[arg(long, global = true, env = "DECKAGENT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for anything randomised (retry jitter).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use a scripted backend read from this JSON file instead of HTTP.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    #[arg(long, global = true, env = "DECKAGENT_API_BASE")]
    pub api_base: Option<String>,
    #[arg(long, global = true, env = "DECKAGENT_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long, global = true, env = "DECKAGENT_CHAT_MODEL")]
    pub chat_model: Option<String>,
    #[arg(long, global = true, env = "DECKAGENT_EMBED_MODEL")]
    pub embed_model: Option<String>,
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    /// HTTP request timeout in seconds.
    #[arg(long, global = true)]
    pub timeout: Option<u64>,

    #[arg(long, global = true)]
    pub retriever: Option<Retriever>,
    #[arg(long, global = true)]
    pub index_mode: Option<IndexMode>,
    #[arg(long, global = true)]
    pub k_pages: Option<usize>,
    #[arg(long, global = true)]
    pub k_elements: Option<usize>,
    #[arg(long, global = true)]
    pub bm25_k1: Option<f64>,
    #[arg(long, global = true)]
    pub bm25_b: Option<f64>,
    /// Merge distance threshold in pixels.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub no_subqueries: bool,
    #[arg(long, global = true)]
    pub subquery_cap: Option<usize>,

    #[arg(long, global = true)]
    pub docs_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub kb_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub reports_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    backend: FileBackend,
    #[serde(default)]
    retrieval: FileRetrieval,
    #[serde(default)]
    paths: FilePaths,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBackend {
    api_base: Option<String>,
    api_key: Option<String>,
    chat_model: Option<String>,
    embed_model: Option<String>,
    script: Option<PathBuf>,
    max_in_flight: Option<usize>,
    timeout: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRetrieval {
    retriever: Option<String>,
    index_mode: Option<String>,
    k_pages: Option<usize>,
    k_elements: Option<usize>,
    bm25_k1: Option<f64>,
    bm25_b: Option<f64>,
    tau: Option<f64>,
    subqueries: Option<bool>,
    subquery_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePaths {
    docs_dir: Option<PathBuf>,
    kb_dir: Option<PathBuf>,
    reports_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendSettings {
    pub api_base: Option<String>,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embed_model: String,
    pub script: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSettings {
    pub retriever: Retriever,
    pub index_mode: IndexMode,
    pub k_pages: usize,
    pub k_elements: usize,
    pub bm25: Bm25Params,
    pub tau: f64,
    pub subqueries: bool,
    pub subquery_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSettings {
    pub docs_dir: Option<PathBuf>,
    pub kb_dir: Option<PathBuf>,
    pub reports_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub backend: BackendSettings,
    pub retrieval: RetrievalSettings,
    pub paths: PathSettings,
    pub seed: u64,
}

/// Relative paths in a config file are taken relative to the file.
fn anchored(base: Option<&Path>, p: Option<PathBuf>) -> Option<PathBuf> {
    match (base, p) {
        (Some(base), Some(p)) if p.is_relative() => Some(base.join(p)),
        (_, p) => p,
    }
}

fn parsed<T: std::str::FromStr<Err = String>>(field: &str, v: Option<String>) -> Result<Option<T>, CliError> {
    v.map(|s| s.parse().map_err(|e| input(format!("config {field}: {e}")))).transpose()
}

impl Config {
    pub fn resolve(opts: &GlobalOpts) -> Result<Self, CliError> {
        let (file, base) = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| input(format!("cannot read config {}: {e}", path.display())))?;
                let file: FileConfig =
                    toml::from_str(&text).map_err(|e| input(format!("config {}: {e}", path.display())))?;
                (file, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        let base = base.as_deref();
        let FileConfig {
            backend: fb,
            retrieval: fr,
            paths: fp,
            seed,
        } = file;

        let cfg = Config {
            backend: BackendSettings {
                api_base: opts.api_base.clone().or(fb.api_base),
                api_key: opts.api_key.clone().or(fb.api_key).filter(|k| !k.is_empty()),
                chat_model: opts.chat_model.clone().or(fb.chat_model).unwrap_or_else(|| "gpt-4o".into()),
                embed_model: opts.embed_model.clone().or(fb.embed_model).unwrap_or_default(),
                script: opts.script.clone().or(anchored(base, fb.script)),
                max_in_flight: opts.max_in_flight.or(fb.max_in_flight).unwrap_or(4),
                timeout: Duration::from_secs(opts.timeout.or(fb.timeout).unwrap_or(120)),
            },
            retrieval: RetrievalSettings {
                retriever: opts.retriever.or(parsed("retriever", fr.retriever)?).unwrap_or(Retriever::Bm25),
                index_mode: opts
                    .index_mode
                    .or(parsed("index_mode", fr.index_mode)?)
                    .unwrap_or(IndexMode::Knowledge),
                k_pages: opts.k_pages.or(fr.k_pages).unwrap_or(DEFAULT_PAGE_K),
                k_elements: opts.k_elements.or(fr.k_elements).unwrap_or(DEFAULT_ELEMENT_K),
                bm25: Bm25Params {
                    k1: opts.bm25_k1.or(fr.bm25_k1).unwrap_or(Bm25Params::default().k1),
                    b: opts.bm25_b.or(fr.bm25_b).unwrap_or(Bm25Params::default().b),
                },
                tau: opts.tau.or(fr.tau).unwrap_or(DEFAULT_TAU),
                subqueries: !opts.no_subqueries && fr.subqueries.unwrap_or(true),
                subquery_cap: opts.subquery_cap.or(fr.subquery_cap).unwrap_or(DEFAULT_SUBQUERY_CAP),
            },
            paths: PathSettings {
                docs_dir: opts.docs_dir.clone().or(anchored(base, fp.docs_dir)),
                kb_dir: opts.kb_dir.clone().or(anchored(base, fp.kb_dir)),
                reports_dir: opts
                    .reports_dir
                    .clone()
                    .or(anchored(base, fp.reports_dir))
                    .unwrap_or_else(|| PathBuf::from("reports")),
            },
            seed: opts.seed.or(seed).unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let r = &self.retrieval;
        if !(r.tau >= 0.0 && r.tau.is_finite()) {
            return Err(input(format!("tau must be a finite number ≥ 0 (got {})", r.tau)));
        }
        if r.k_pages == 0 || r.k_elements == 0 {
            return Err(input("k values must be ≥ 1"));
        }
        if !(r.bm25.k1 >= 0.0 && (0.0..=1.0).contains(&r.bm25.b)) {
            return Err(input("bm25 needs k1 ≥ 0 and 0 ≤ b ≤ 1"));
        }
        if self.backend.max_in_flight == 0 {
            return Err(input("max_in_flight must be ≥ 1"));
        }
        if let Some(script) = &self.backend.script {
            if !script.is_file() {
                return Err(input(format!("script {} not found", script.display())));
            }
        }
        Ok(())
    }

    pub fn answer_config(&self) -> AnswerConfig {
        let r = &self.retrieval;
        AnswerConfig {
            k_pages: r.k_pages,
            k_elements: r.k_elements,
            subqueries: r.subqueries,
            subquery_cap: r.subquery_cap,
            retriever: r.retriever,
            index_mode: r.index_mode,
            bm25: r.bm25,
            gold_pages: None,
        }
    }

    /// The scripted backend when `script` is set, the HTTP client otherwise.
    pub fn backend(&self) -> Result<Box<dyn Backend>, CliError> {
        let b = &self.backend;
        if let Some(script) = &b.script {
            let scripted = ScriptedBackend::from_file(script)
                .map_err(|e| input(format!("script {}: {e}", script.display())))?
                .with_max_in_flight(b.max_in_flight);
            return Ok(Box::new(scripted));
        }
        let Some(api_base) = &b.api_base else {
            return Err(input("no backend configured: pass --script or set DECKAGENT_API_BASE"));
        };
        let mut http = HttpConfig::new(api_base.clone(), b.chat_model.clone());
        http.api_key = b.api_key.clone();
        http.embed_model = b.embed_model.clone();
        http.max_in_flight = b.max_in_flight;
        http.timeout = b.timeout;
        http.seed = self.seed;
        Ok(Box::new(HttpBackend::new(http)?))
    }
}
