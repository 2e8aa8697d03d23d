//! Query classification, subquery generation and page/element retrieval.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::Document;
use crate::knowledge::KnowledgeBase;
use crate::llm::{Backend, BackendError, ChatMessage, ChatRequest, PromptLog};
use crate::util::{sha256_hex, write_json_atomic};

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_SUBQUERY_CAP: usize = 5;
pub const DEFAULT_PAGE_K: usize = 3;
pub const DEFAULT_ELEMENT_K: usize = 5;

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Agent levels, ordered from coarsest to finest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentLevel {
    Global,
    Page,
    Element,
}

impl AgentLevel {
    pub fn name(self) -> &'static str {
        match self {
            AgentLevel::Global => "global",
            AgentLevel::Page => "page",
            AgentLevel::Element => "element",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryCase {
    GlobalUnderstanding,
    FactDirect,
    MultiHop,
    LayoutVisual,
    Uncertain,
}

impl QueryCase {
    pub const ALL: [QueryCase; 5] = [
        QueryCase::GlobalUnderstanding,
        QueryCase::FactDirect,
        QueryCase::MultiHop,
        QueryCase::LayoutVisual,
        QueryCase::Uncertain,
    ];

    /// Agents activated for this case, coarsest first.
    pub fn agents(self) -> &'static [AgentLevel] {
        use AgentLevel::*;
        match self {
            QueryCase::GlobalUnderstanding => &[Global],
            QueryCase::FactDirect => &[Page, Element],
            QueryCase::MultiHop => &[Global, Page, Element],
            QueryCase::LayoutVisual => &[Element],
            QueryCase::Uncertain => &[Global, Page, Element],
        }
    }

    pub fn activates(self, level: AgentLevel) -> bool {
        self.agents().contains(&level)
    }

    pub fn label(self) -> &'static str {
        match self {
            QueryCase::GlobalUnderstanding => "GlobalUnderstanding",
            QueryCase::FactDirect => "FactDirect",
            QueryCase::MultiHop => "MultiHop",
            QueryCase::LayoutVisual => "LayoutVisual",
            QueryCase::Uncertain => "Uncertain",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            QueryCase::GlobalUnderstanding => &["globalunderstanding"],
            QueryCase::FactDirect => &["factdirect", "factbaseddirectquery", "factbased"],
            QueryCase::MultiHop => &["multihop", "multihopreasoning"],
            QueryCase::LayoutVisual => &["layoutvisual", "layoutvisualrelationship"],
            QueryCase::Uncertain => &["uncertain", "unknown"],
        }
    }

    /// Reads a case label out of a model reply. The reply must name exactly
    /// one case; anything else is `None`.
    pub fn parse_reply(reply: &str) -> Option<QueryCase> {
        let squash = |s: &str| -> String { s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect() };
        let whole = squash(reply);
        if let Some(c) = Self::ALL.iter().find(|c| c.aliases().contains(&whole.as_str())) {
            return Some(*c);
        }
        // a label embedded in a longer reply, e.g. "Case: FactDirect."
        let words: Vec<String> = reply
            .split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':' | '.' | '"' | '\'' | '`' | '(' | ')' | '*'))
            .map(squash)
            .filter(|w| !w.is_empty())
            .collect();
        let found: HashSet<QueryCase> = Self::ALL
            .iter()
            .copied()
            .filter(|c| words.iter().any(|w| c.aliases()[0] == w))
            .collect();
        if found.len() == 1 {
            found.into_iter().next()
        } else {
            None
        }
    }
}

impl std::fmt::Display for QueryCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub original_query: String,
    pub case: QueryCase,
    pub subqueries: Vec<String>,
}

impl QueryPlan {
    pub fn new(query: impl Into<String>, case: QueryCase, subqueries: Vec<String>) -> Self {
        Self {
            original_query: query.into(),
            case,
            subqueries,
        }
    }

    /// The query followed by every subquery, single-space separated.
    pub fn retrieval_query(&self) -> String {
        std::iter::once(self.original_query.as_str())
            .chain(self.subqueries.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("k ≥ 1 required (got {0})")]
    InvalidK(usize),
    #[error("index is empty")]
    EmptyIndex,
    #[error("knowledge base does not match document: {0}")]
    Mismatch(String),
    #[error("embedding failed: {0}")]
    Backend(#[from] BackendError),
    #[error("index file {path}: {message}")]
    Persist { path: PathBuf, message: String },
}

const CLASSIFY_PROMPT: &str = "Task: classify query
Decide which kind of question the user is asking about a slide deck.

GlobalUnderstanding: about the deck as a whole (its theme, purpose or overall summary).
FactDirect: a specific fact, figure or detail found on particular slides.
MultiHop: needs information combined or compared across several slides or elements.
LayoutVisual: about visual or spatial relationships, positioning, colours or diagram layout.
Uncertain: none of the above clearly applies.

Reply with exactly one label: GlobalUnderstanding, FactDirect, MultiHop, LayoutVisual or Uncertain.";

const SUBQUERY_PROMPT: &str = "Task: generate subqueries
Rewrite the question below into short search queries, one per line, each naming a key entity, \
quantity or visual element the answer depends on. Reply with the queries only.";

/// Classifies `query`. Backend failures and unrecognised replies give `Uncertain`.
pub fn classify_query(query: &str, backend: &dyn Backend, log: &PromptLog) -> QueryCase {
    let req = ChatRequest::new(vec![ChatMessage::user_text(format!("{CLASSIFY_PROMPT}\n\nQuestion: {query}"))]);
    match log.call(backend, "classify", &req) {
        Ok(reply) => QueryCase::parse_reply(&reply.text).unwrap_or_else(|| {
            log::warn!("unrecognised classification {:?}; treating as Uncertain", reply.text);
            QueryCase::Uncertain
        }),
        Err(e) => {
            log::warn!("classification failed: {e}");
            QueryCase::Uncertain
        }
    }
}

/// Parses a subquery reply: either a JSON array of strings or one query per
/// line. Bullets, numbering and surrounding quotes are removed; duplicates
/// (case-insensitive) and empties dropped; at most `cap` kept.
pub fn parse_subqueries(reply: &str, cap: usize) -> Vec<String> {
    let items: Vec<String> = match serde_json::from_str::<Vec<String>>(reply.trim()) {
        Ok(v) => v,
        Err(_) => reply.lines().map(clean_line).collect(),
    };
    let mut seen = HashSet::new();
    items
        .into_iter()
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| !s.is_empty() && seen.insert(s.to_lowercase()))
        .take(cap)
        .collect()
}

fn clean_line(line: &str) -> String {
    let mut s = line.trim();
    s = s.trim_start_matches(['-', '*', '•', '+']).trim_start();
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 && s[digits..].starts_with(['.', ')']) {
        s = s[digits + 1..].trim_start();
    }
    s.trim_matches(['"', '\'', '`', ',']).trim().to_string()
}

/// Entity-focused subqueries for `query`. Backend failure gives an empty list.
pub fn generate_subqueries(query: &str, backend: &dyn Backend, log: &PromptLog, cap: usize) -> Vec<String> {
    if cap == 0 {
        return Vec::new();
    }
    let req = ChatRequest::new(vec![ChatMessage::user_text(format!("{SUBQUERY_PROMPT}\n\nQuestion: {query}"))]);
    match log.call(backend, "subqueries", &req) {
        Ok(reply) => parse_subqueries(&reply.text, cap),
        Err(e) => {
            log::warn!("subquery generation failed: {e}");
            Vec::new()
        }
    }
}

/// Classifies `query` and, if `subqueries` is on, generates subqueries.
pub fn plan_query(
    query: &str,
    backend: &dyn Backend,
    log: &PromptLog,
    subqueries: bool,
    cap: usize,
) -> Result<QueryPlan, RetrievalError> {
    if query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let case = classify_query(query, backend, log);
    let subs = if subqueries {
        generate_subqueries(query, backend, log, cap)
    } else {
        Vec::new()
    };
    Ok(QueryPlan::new(query, case, subs))
}

/// Document frequencies and average length over a tokenised corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub df: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn from_docs(docs: &[Vec<String>]) -> Self {
        let mut df = BTreeMap::new();
        let mut total = 0usize;
        for d in docs {
            total += d.len();
            for t in d.iter().collect::<HashSet<_>>() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        Self {
            n_docs: docs.len(),
            avg_len: if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 },
            df,
        }
    }

    /// Robertson IDF, floored at zero.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: BM25_K1, b: BM25_B }
    }
}

/// Okapi BM25 of one document. A query token given twice contributes twice.
pub fn bm25_score(query_tokens: &[String], doc_tokens: &[String], stats: &CorpusStats) -> f64 {
    bm25_score_with(query_tokens, doc_tokens, stats, Bm25Params::default())
}

pub fn bm25_score_with(query_tokens: &[String], doc_tokens: &[String], stats: &CorpusStats, params: Bm25Params) -> f64 {
    let Bm25Params { k1, b } = params;
    if doc_tokens.is_empty() || stats.avg_len == 0.0 {
        return 0.0;
    }
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in doc_tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    let norm = k1 * (1.0 - b + b * doc_tokens.len() as f64 / stats.avg_len);
    query_tokens
        .iter()
        .map(|q| match tf.get(q.as_str()) {
            Some(&f) => {
                let f = f as f64;
                stats.idf(q) * f * (k1 + 1.0) / (f + norm)
            }
            None => 0.0,
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retriever {
    Bm25,
    Dense,
}

impl Retriever {
    pub fn name(self) -> &'static str {
        match self {
            Retriever::Bm25 => "bm25",
            Retriever::Dense => "dense",
        }
    }

    fn file_tag(self) -> &'static str {
        match self {
            Retriever::Bm25 => "sparse",
            Retriever::Dense => "dense",
        }
    }
}

impl std::str::FromStr for Retriever {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bm25" | "sparse" => Ok(Retriever::Bm25),
            "dense" => Ok(Retriever::Dense),
            other => Err(format!("unknown retriever {other:?} (expected bm25 or dense)")),
        }
    }
}

/// What a page's indexed text is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    /// The page's agent-written knowledge.
    Knowledge,
    /// Verbatim element text.
    Ocr,
}

impl std::str::FromStr for IndexMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "knowledge" => Ok(IndexMode::Knowledge),
            "ocr" => Ok(IndexMode::Ocr),
            other => Err(format!("unknown index mode {other:?} (expected knowledge or ocr)")),
        }
    }
}

/// Embeddings keyed by a hash of model name and text, optionally persisted.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RetrievalError> {
        let path = path.into();
        let vectors = if path.is_file() {
            read_json(&path)?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            path: Some(path),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn key(model: &str, text: &str) -> String {
        sha256_hex(format!("{model}\u{0}{text}").as_bytes())
    }

    /// Vectors for `texts`, embedding only the ones not cached. Blank texts
    /// get an empty vector without a backend call.
    pub fn embed(&mut self, backend: &dyn Backend, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let model = backend.embed_model().to_string();
        let mut missing: Vec<String> = Vec::new();
        for t in texts {
            if !t.trim().is_empty() && !self.vectors.contains_key(&Self::key(&model, t)) && !missing.contains(t) {
                missing.push(t.clone());
            }
        }
        if !missing.is_empty() {
            let got = backend.embed(&missing)?;
            for (t, v) in missing.iter().zip(got) {
                self.vectors.insert(Self::key(&model, t), v.values);
            }
            if let Some(path) = &self.path {
                write_json_atomic(path, &self.vectors).map_err(|e| persist_err(path, e))?;
            }
        }
        Ok(texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    Vec::new()
                } else {
                    self.vectors[&Self::key(&model, t)].clone()
                }
            })
            .collect())
    }
}

fn persist_err(path: &Path, e: impl std::fmt::Display) -> RetrievalError {
    RetrievalError::Persist {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RetrievalError> {
    let text = std::fs::read_to_string(path).map_err(|e| persist_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| persist_err(path, e))
}

fn unit_normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x = (*x as f64 / norm) as f32;
        }
    }
    v
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// One text unit per key, scored sparsely (BM25) or densely (cosine).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextIndex {
    pub retriever: Retriever,
    pub texts: Vec<String>,
    tokens: Vec<Vec<String>>,
    stats: CorpusStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embed_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vectors: Option<Vec<Vec<f32>>>,
    /// Applied at query time, so not persisted.
    #[serde(skip)]
    bm25: Bm25Params,
}

impl TextIndex {
    pub fn build(
        texts: Vec<String>,
        retriever: Retriever,
        backend: Option<&dyn Backend>,
        cache: &mut EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let stats = CorpusStats::from_docs(&tokens);
        let (embed_model, vectors) = match retriever {
            Retriever::Bm25 => (None, None),
            Retriever::Dense => {
                let backend = backend.ok_or_else(|| {
                    RetrievalError::Backend(BackendError::Config("dense retrieval needs an embedding backend".into()))
                })?;
                let v = cache.embed(backend, &texts)?.into_iter().map(unit_normalize).collect();
                (Some(backend.embed_model().to_string()), Some(v))
            }
        };
        Ok(Self {
            retriever,
            texts,
            tokens,
            stats,
            embed_model,
            vectors,
            bm25: Bm25Params::default(),
        })
    }

    pub fn set_bm25(&mut self, params: Bm25Params) {
        self.bm25 = params;
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    /// Score of every unit for `query`, in index order.
    pub fn scores(&self, query: &str, backend: Option<&dyn Backend>) -> Result<Vec<f64>, RetrievalError> {
        match (&self.vectors, self.retriever) {
            (Some(vectors), Retriever::Dense) => {
                let backend = backend.ok_or_else(|| {
                    RetrievalError::Backend(BackendError::Config("dense retrieval needs an embedding backend".into()))
                })?;
                let q = backend.embed(&[query.to_string()])?;
                let q = unit_normalize(q.into_iter().next().map(|v| v.values).unwrap_or_default());
                Ok(vectors.iter().map(|v| if v.is_empty() { 0.0 } else { dot(&q, v) }).collect())
            }
            _ => {
                let q = tokenize(query);
                Ok(self.tokens.iter().map(|d| bm25_score_with(&q, d, &self.stats, self.bm25)).collect())
            }
        }
    }
}

/// Positions of the `k` best scores; ties go to the smaller key.
fn top_k<K: Ord>(scores: &[f64], keys: &[K], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| keys[a].cmp(&keys[b])));
    order.truncate(k);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPage {
    pub page_index: u32,
    pub score: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedElement {
    pub element_id: String,
    pub page_index: u32,
    pub score: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageIndex {
    pub doc_id: String,
    pub mode: IndexMode,
    pub pages: Vec<u32>,
    pub index: TextIndex,
}

/// Indexed text of every page for `mode`, in document order.
pub fn page_units(kb: Option<&KnowledgeBase>, doc: &Document, mode: IndexMode) -> Result<Vec<(u32, String)>, RetrievalError> {
    match mode {
        IndexMode::Ocr => Ok(doc
            .pages
            .iter()
            .map(|p| {
                let text = p
                    .elements
                    .iter()
                    .map(|e| e.verbatim.trim())
                    .filter(|t| !t.is_empty())
                    .collect::<Vec<_>>()
                    .join(" ");
                (p.index, text)
            })
            .collect()),
        IndexMode::Knowledge => {
            let kb = kb.ok_or_else(|| RetrievalError::Mismatch("knowledge mode needs a knowledge base".into()))?;
            check_kb(kb, doc)?;
            doc.pages
                .iter()
                .map(|p| {
                    kb.page(p.index)
                        .map(|k| (p.index, k.raw_text.clone()))
                        .ok_or_else(|| RetrievalError::Mismatch(format!("no knowledge for page {}", p.index)))
                })
                .collect()
        }
    }
}

fn check_kb(kb: &KnowledgeBase, doc: &Document) -> Result<(), RetrievalError> {
    if kb.doc_id != doc.doc_id {
        return Err(RetrievalError::Mismatch(format!(
            "knowledge base is for {:?}, document is {:?}",
            kb.doc_id, doc.doc_id
        )));
    }
    if kb.pages.len() != doc.pages.len() {
        return Err(RetrievalError::Mismatch(format!(
            "{} pages of knowledge for {} pages",
            kb.pages.len(),
            doc.pages.len()
        )));
    }
    Ok(())
}

impl PageIndex {
    pub fn from_units(
        doc_id: &str,
        mode: IndexMode,
        units: Vec<(u32, String)>,
        retriever: Retriever,
        backend: Option<&dyn Backend>,
        cache: &mut EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        let (pages, texts): (Vec<u32>, Vec<String>) = units.into_iter().unzip();
        Ok(Self {
            doc_id: doc_id.to_string(),
            mode,
            pages,
            index: TextIndex::build(texts, retriever, backend, cache)?,
        })
    }

    pub fn file_name(retriever: Retriever) -> String {
        format!("pages.{}.json", retriever.file_tag())
    }
}

/// Builds a page index over `doc` (and `kb` in knowledge mode).
pub fn index_pages(
    kb: Option<&KnowledgeBase>,
    doc: &Document,
    mode: IndexMode,
    retriever: Retriever,
    backend: Option<&dyn Backend>,
    cache: &mut EmbeddingCache,
) -> Result<PageIndex, RetrievalError> {
    let units = page_units(kb, doc, mode)?;
    PageIndex::from_units(&doc.doc_id, mode, units, retriever, backend, cache)
}

/// Top-`k` pages for the plan's joint query.
pub fn retrieve_pages(
    plan: &QueryPlan,
    index: &PageIndex,
    k: usize,
    backend: Option<&dyn Backend>,
) -> Result<Vec<RankedPage>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK(k));
    }
    if index.pages.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let scores = index.index.scores(&plan.retrieval_query(), backend)?;
    Ok(top_k(&scores, &index.pages, k)
        .into_iter()
        .map(|i| RankedPage {
            page_index: index.pages[i],
            score: scores[i],
            source: index.index.retriever.name().to_string(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementIndex {
    pub doc_id: String,
    pub element_ids: Vec<String>,
    pub pages: Vec<u32>,
    pub index: TextIndex,
}

impl ElementIndex {
    pub fn file_name(retriever: Retriever) -> String {
        format!("elements.{}.json", retriever.file_tag())
    }
}

/// An element's indexed text: its verbatim text followed by its knowledge.
pub fn element_unit(verbatim: &str, knowledge: Option<&str>) -> String {
    match knowledge {
        Some(k) if !k.trim().is_empty() => {
            if verbatim.trim().is_empty() {
                k.to_string()
            } else {
                format!("{}\n{}", verbatim.trim(), k)
            }
        }
        _ => verbatim.trim().to_string(),
    }
}

pub fn index_elements(
    kb: Option<&KnowledgeBase>,
    doc: &Document,
    retriever: Retriever,
    backend: Option<&dyn Backend>,
    cache: &mut EmbeddingCache,
) -> Result<ElementIndex, RetrievalError> {
    if let Some(kb) = kb {
        check_kb(kb, doc)?;
    }
    let mut ids = Vec::new();
    let mut pages = Vec::new();
    let mut texts = Vec::new();
    for e in doc.elements() {
        let k = kb.and_then(|kb| kb.element(&e.element_id)).map(|k| k.raw_text.as_str());
        ids.push(e.element_id.clone());
        pages.push(e.page_index);
        texts.push(element_unit(&e.verbatim, k));
    }
    Ok(ElementIndex {
        doc_id: doc.doc_id.clone(),
        element_ids: ids,
        pages,
        index: TextIndex::build(texts, retriever, backend, cache)?,
    })
}

/// Top-`k` elements for the plan's joint query.
pub fn retrieve_elements(
    plan: &QueryPlan,
    index: &ElementIndex,
    k: usize,
    backend: Option<&dyn Backend>,
) -> Result<Vec<RankedElement>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK(k));
    }
    if index.element_ids.is_empty() {
        return Ok(Vec::new());
    }
    let scores = index.index.scores(&plan.retrieval_query(), backend)?;
    Ok(top_k(&scores, &index.element_ids, k)
        .into_iter()
        .map(|i| RankedElement {
            element_id: index.element_ids[i].clone(),
            page_index: index.pages[i],
            score: scores[i],
            source: index.index.retriever.name().to_string(),
        })
        .collect())
}

/// Loads `<dir>/<file>` when it holds an index of the same document, mode and
/// retriever; otherwise builds one and writes it there.
pub fn load_or_build_page_index(
    dir: &Path,
    kb: Option<&KnowledgeBase>,
    doc: &Document,
    mode: IndexMode,
    retriever: Retriever,
    backend: Option<&dyn Backend>,
    cache: &mut EmbeddingCache,
) -> Result<PageIndex, RetrievalError> {
    let path = dir.join(PageIndex::file_name(retriever));
    if path.is_file() {
        if let Ok(idx) = read_json::<PageIndex>(&path) {
            if idx.doc_id == doc.doc_id && idx.mode == mode && idx.index.retriever == retriever {
                return Ok(idx);
            }
        }
    }
    let idx = index_pages(kb, doc, mode, retriever, backend, cache)?;
    write_json_atomic(&path, &idx).map_err(|e| persist_err(&path, e))?;
    Ok(idx)
}

pub fn load_or_build_element_index(
    dir: &Path,
    kb: Option<&KnowledgeBase>,
    doc: &Document,
    retriever: Retriever,
    backend: Option<&dyn Backend>,
    cache: &mut EmbeddingCache,
) -> Result<ElementIndex, RetrievalError> {
    let path = dir.join(ElementIndex::file_name(retriever));
    if path.is_file() {
        if let Ok(idx) = read_json::<ElementIndex>(&path) {
            if idx.doc_id == doc.doc_id && idx.index.retriever == retriever {
                return Ok(idx);
            }
        }
    }
    let idx = index_elements(kb, doc, retriever, backend, cache)?;
    write_json_atomic(&path, &idx).map_err(|e| persist_err(&path, e))?;
    Ok(idx)
}
