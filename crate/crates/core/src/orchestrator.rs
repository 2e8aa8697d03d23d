//! Query answering: run the activated agents, check whether they agree, and
//! synthesise when they do not.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::{Document, Element, Page};
use crate::knowledge::{annotate_page, KnowledgeBase, GLOBAL_SAMPLE_PAGES};
use crate::llm::{Backend, ChatMessage, ChatRequest, Part, PromptLog, PromptRecord};
use crate::retrieval::{
    plan_query, retrieve_elements, retrieve_pages, AgentLevel, Bm25Params, ElementIndex, EmbeddingCache, IndexMode, PageIndex,
    QueryPlan, RankedElement, RankedPage, RetrievalError, Retriever, DEFAULT_ELEMENT_K, DEFAULT_PAGE_K,
    DEFAULT_SUBQUERY_CAP,
};
use crate::util::{sha256_hex, write_json_atomic};

/// Two answers are equivalent at or above this similarity.
pub const AGREEMENT_THRESHOLD: f64 = 0.75;

/// Answer given by an agent that had nothing retrieved to look at.
pub const INSUFFICIENT_CONTEXT: &str = "insufficient context";

fn normalize_answer(s: &str) -> Vec<char> {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect()
}

/// Normalised Levenshtein similarity after lowercasing and collapsing whitespace.
pub fn nls(a: &str, b: &str) -> f64 {
    let a: String = normalize_answer(a).into_iter().collect();
    let b: String = normalize_answer(b).into_iter().collect();
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / longest as f64
}

/// True when every pair of answers is at least [`AGREEMENT_THRESHOLD`] similar.
pub fn texts_agree<S: AsRef<str>>(answers: &[S]) -> bool {
    answers.iter().enumerate().all(|(i, a)| {
        answers[i + 1..]
            .iter()
            .all(|b| nls(a.as_ref(), b.as_ref()) >= AGREEMENT_THRESHOLD)
    })
}

pub fn answers_agree(answers: &[AgentAnswer]) -> bool {
    let texts: Vec<&str> = answers.iter().map(|a| a.answer.as_str()).collect();
    texts_agree(&texts)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub pages: BTreeSet<u32>,
    pub elements: BTreeSet<String>,
}

impl Provenance {
    pub fn is_empty(&self) -> bool {
        self.pages.is_empty() && self.elements.is_empty()
    }

    pub fn extend(&mut self, other: &Provenance) {
        self.pages.extend(other.pages.iter().copied());
        self.elements.extend(other.elements.iter().cloned());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAnswer {
    pub level: AgentLevel,
    pub answer: String,
    pub reasoning: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    /// The reply lacked the answer/reasoning delimiters.
    #[serde(default)]
    pub format_warning: bool,
    /// Nothing was retrieved, so the agent gave the sentinel answer.
    #[serde(default)]
    pub insufficient_context: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AgentAnswer {
    fn failed(level: AgentLevel, prompt_id: Option<String>, error: String) -> Self {
        Self {
            level,
            answer: String::new(),
            reasoning: String::new(),
            provenance: Provenance::default(),
            prompt_id,
            format_warning: false,
            insufficient_context: false,
            error: Some(error),
        }
    }

    fn insufficient(level: AgentLevel) -> Self {
        Self {
            level,
            answer: INSUFFICIENT_CONTEXT.to_string(),
            reasoning: String::new(),
            provenance: Provenance::default(),
            prompt_id: None,
            format_warning: false,
            insufficient_context: true,
            error: None,
        }
    }

    /// Ran, replied, and had something to look at.
    pub fn is_usable(&self) -> bool {
        self.error.is_none() && !self.insufficient_context && !self.answer.is_empty()
    }
}

/// Splits a reply into `(answer, reasoning, delimited)`.
pub fn parse_agent_reply(reply: &str) -> (String, String, bool) {
    let mut answer: Option<Vec<&str>> = None;
    let mut reasoning: Option<Vec<&str>> = None;
    let mut current = 0u8;
    for line in reply.lines() {
        let t = line.trim_start().trim_start_matches(['*', '#', ' ']);
        let upper = t.to_ascii_uppercase();
        let rest = |n: usize| t[n..].trim_start_matches(['*', ' ']).trim();
        if upper.starts_with("ANSWER:") {
            current = 1;
            answer.get_or_insert_with(Vec::new).push(rest(7));
        } else if upper.starts_with("REASONING:") {
            current = 2;
            reasoning.get_or_insert_with(Vec::new).push(rest(10));
        } else if current == 1 {
            answer.get_or_insert_with(Vec::new).push(line.trim());
        } else if current == 2 {
            reasoning.get_or_insert_with(Vec::new).push(line.trim());
        }
    }
    let join = |v: Vec<&str>| v.join("\n").trim().to_string();
    match answer {
        Some(a) => (join(a), reasoning.map(join).unwrap_or_default(), true),
        None => (reply.trim().to_string(), String::new(), false),
    }
}

const DELIMITER_INSTRUCTIONS: &str = "Reply in exactly this format:
ANSWER: <the short final answer>
REASONING: <how you arrived at it>";

const AGENT_SYSTEM: &str = "You answer questions about a slide deck using the context and page images given.";

fn agent_call(
    level: AgentLevel,
    prompt_id: &str,
    task: String,
    images: Vec<Vec<u8>>,
    provenance: Provenance,
    backend: &dyn Backend,
    log: &PromptLog,
) -> AgentAnswer {
    let mut parts = vec![Part::text(task)];
    parts.extend(images.into_iter().map(Part::png));
    let req = ChatRequest::new(vec![ChatMessage::system(AGENT_SYSTEM), ChatMessage::user(parts)]);
    match log.call(backend, prompt_id, &req) {
        Ok(reply) => {
            let (answer, reasoning, delimited) = parse_agent_reply(&reply.text);
            if !delimited {
                log::warn!("{} agent reply had no delimiters; using the whole reply", level.name());
            }
            if answer.is_empty() {
                return AgentAnswer::failed(level, Some(prompt_id.into()), "empty answer".into());
            }
            AgentAnswer {
                level,
                answer,
                reasoning,
                provenance,
                prompt_id: Some(prompt_id.into()),
                format_warning: !delimited,
                insufficient_context: false,
                error: None,
            }
        }
        Err(e) => AgentAnswer::failed(level, Some(prompt_id.into()), e.to_string()),
    }
}

fn read_rasters(doc: &Document, pages: &[u32]) -> Result<Vec<Vec<u8>>, String> {
    pages
        .iter()
        .map(|&i| {
            let page = doc.page(i).ok_or_else(|| format!("no page {i}"))?;
            doc.read_raster(page).map_err(|e| format!("page {i} raster: {e}"))
        })
        .collect()
}

pub fn answer_global(kb: &KnowledgeBase, doc: &Document, query: &str, backend: &dyn Backend, log: &PromptLog) -> AgentAnswer {
    let level = AgentLevel::Global;
    let sampled: Vec<u32> = doc.pages.iter().take(GLOBAL_SAMPLE_PAGES).map(|p| p.index).collect();
    let images = match read_rasters(doc, &sampled) {
        Ok(v) => v,
        Err(e) => return AgentAnswer::failed(level, None, e),
    };
    let task = format!(
        "Task: global answer\n\
         You see the first {} pages of the deck and its global knowledge.\n\n\
         ## Global knowledge\n{}\n\n## Question\n{query}\n\n{DELIMITER_INSTRUCTIONS}",
        sampled.len(),
        kb.global.raw_markdown.trim_end()
    );
    agent_call(level, "answer-global", task, images, Provenance::default(), backend, log)
}

pub fn answer_page(
    kb: &KnowledgeBase,
    doc: &Document,
    query: &str,
    pages: &[u32],
    global: Option<&AgentAnswer>,
    backend: &dyn Backend,
    log: &PromptLog,
) -> AgentAnswer {
    let level = AgentLevel::Page;
    if pages.is_empty() {
        return AgentAnswer::insufficient(level);
    }
    let images = match read_rasters(doc, pages) {
        Ok(v) => v,
        Err(e) => return AgentAnswer::failed(level, None, e),
    };
    let mut task = String::from("Task: page answer\nThe attached images are the pages listed below, in order.\n");
    for &i in pages {
        let knowledge = kb.page(i).map(|p| p.raw_text.trim_end()).unwrap_or("");
        task.push_str(&format!("\n## Page {i}\n{knowledge}\n"));
    }
    if let Some(h) = global.filter(|h| h.is_usable()) {
        task.push_str(&format!(
            "\n## Global agent's answer\nANSWER: {}\nREASONING: {}\n",
            h.answer, h.reasoning
        ));
    }
    task.push_str(&format!("\n## Question\n{query}\n\n{DELIMITER_INSTRUCTIONS}"));
    let provenance = Provenance {
        pages: pages.iter().copied().collect(),
        elements: BTreeSet::new(),
    };
    agent_call(level, "answer-page", task, images, provenance, backend, log)
}

pub fn answer_element(
    kb: &KnowledgeBase,
    doc: &Document,
    query: &str,
    element_ids: &[String],
    backend: &dyn Backend,
    log: &PromptLog,
) -> AgentAnswer {
    let level = AgentLevel::Element;
    if element_ids.is_empty() {
        return AgentAnswer::insufficient(level);
    }
    let mut by_page: BTreeMap<u32, Vec<&Element>> = BTreeMap::new();
    for id in element_ids {
        match doc.element(id) {
            Some(e) => by_page.entry(e.page_index).or_default().push(e),
            None => return AgentAnswer::failed(level, None, format!("unknown element {id:?}")),
        }
    }
    let mut images = Vec::new();
    for (&i, elements) in &by_page {
        let page: &Page = match doc.page(i) {
            Some(p) => p,
            None => return AgentAnswer::failed(level, None, format!("no page {i}")),
        };
        let annotated = doc
            .read_raster(page)
            .map_err(|e| e.to_string())
            .and_then(|raw| annotate_page(page, &raw, elements).map_err(|e| e.to_string()));
        match annotated {
            Ok(img) => images.push(img),
            Err(e) => return AgentAnswer::failed(level, None, e),
        }
    }
    let pages: Vec<String> = by_page.keys().map(u32::to_string).collect();
    let mut task = format!(
        "Task: element answer\n\
         The attached images are pages {} with the elements below outlined and labelled by id.\n",
        pages.join(", ")
    );
    for id in element_ids {
        let e = doc.element(id).expect("checked above");
        let b = e.bbox;
        task.push_str(&format!(
            "\n## Element {} (page {}, {}, box [{}, {}, {}, {}])\nVerbatim text: {:?}\n",
            e.element_id, e.page_index, e.etype, b.x1, b.y1, b.x2, b.y2, e.verbatim
        ));
        if let Some(k) = kb.element(id) {
            task.push_str(&format!("{}\n", k.raw_text.trim_end()));
        }
    }
    task.push_str(&format!("\n## Question\n{query}\n\n{DELIMITER_INSTRUCTIONS}"));
    let provenance = Provenance {
        pages: BTreeSet::new(),
        elements: element_ids.iter().cloned().collect(),
    };
    agent_call(level, "answer-element", task, images, provenance, backend, log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerMode {
    DirectSingleAgent,
    DirectAgreement,
    Synthesized,
    /// Synthesis was needed but failed, or only one of several agents
    /// succeeded; the finest usable answer is returned.
    DegradedDirect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: String,
    pub mode: AnswerMode,
    pub contributing: Vec<AgentAnswer>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reasoning: String,
}

fn finest(answers: &[AgentAnswer]) -> &AgentAnswer {
    answers.iter().max_by_key(|a| a.level).expect("at least one answer")
}

fn merged_provenance(answers: &[AgentAnswer]) -> Provenance {
    let mut p = Provenance::default();
    for a in answers {
        p.extend(&a.provenance);
    }
    p
}

fn direct(answers: Vec<AgentAnswer>, mode: AnswerMode) -> FinalAnswer {
    let chosen = finest(&answers);
    FinalAnswer {
        answer: chosen.answer.clone(),
        reasoning: chosen.reasoning.clone(),
        mode,
        provenance: merged_provenance(&answers),
        contributing: answers,
    }
}

/// Combines disagreeing answers with one more call. On failure the finest
/// answer is returned in degraded mode.
pub fn synthesize(
    answers: Vec<AgentAnswer>,
    rasters: Vec<Vec<u8>>,
    query: &str,
    backend: &dyn Backend,
    log: &PromptLog,
) -> FinalAnswer {
    let mut task = String::from(
        "Task: synthesize answer\nSeveral agents answered the question below and disagree. \
         Weigh their answers and reasoning against the attached pages and give one final answer.\n",
    );
    for a in &answers {
        task.push_str(&format!(
            "\n## {} agent\nANSWER: {}\nREASONING: {}\n",
            a.level.name(),
            a.answer,
            a.reasoning
        ));
    }
    task.push_str(&format!("\n## Question\n{query}\n\n{DELIMITER_INSTRUCTIONS}"));
    let mut parts = vec![Part::text(task)];
    parts.extend(rasters.into_iter().map(Part::png));
    let req = ChatRequest::new(vec![ChatMessage::system(AGENT_SYSTEM), ChatMessage::user(parts)]);
    match log.call(backend, "synthesize", &req) {
        Ok(reply) => {
            let (answer, reasoning, _) = parse_agent_reply(&reply.text);
            if answer.is_empty() {
                log::warn!("synthesizer returned an empty answer");
                return direct(answers, AnswerMode::DegradedDirect);
            }
            FinalAnswer {
                answer,
                reasoning,
                mode: AnswerMode::Synthesized,
                provenance: merged_provenance(&answers),
                contributing: answers,
            }
        }
        Err(e) => {
            log::warn!("synthesis failed: {e}");
            direct(answers, AnswerMode::DegradedDirect)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerConfig {
    pub k_pages: usize,
    pub k_elements: usize,
    pub subqueries: bool,
    pub subquery_cap: usize,
    pub retriever: Retriever,
    pub index_mode: IndexMode,
    pub bm25: Bm25Params,
    /// Answer-bearing pages, when known; retrieval is skipped.
    pub gold_pages: Option<Vec<u32>>,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self {
            k_pages: DEFAULT_PAGE_K,
            k_elements: DEFAULT_ELEMENT_K,
            subqueries: true,
            subquery_cap: DEFAULT_SUBQUERY_CAP,
            retriever: Retriever::Bm25,
            index_mode: IndexMode::Knowledge,
            bm25: Bm25Params::default(),
            gold_pages: None,
        }
    }
}

/// Page and element indexes for one document.
#[derive(Debug, Clone)]
pub struct Indexes {
    pub pages: PageIndex,
    pub elements: ElementIndex,
}

impl Indexes {
    pub fn build(
        kb: &KnowledgeBase,
        doc: &Document,
        config: &AnswerConfig,
        backend: &dyn Backend,
        cache: &mut EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        Ok(Self {
            pages: crate::retrieval::index_pages(Some(kb), doc, config.index_mode, config.retriever, Some(backend), cache)?,
            elements: crate::retrieval::index_elements(Some(kb), doc, config.retriever, Some(backend), cache)?,
        }
        .with_bm25(config.bm25))
    }

    fn with_bm25(mut self, params: Bm25Params) -> Self {
        self.pages.index.set_bm25(params);
        self.elements.index.set_bm25(params);
        self
    }

    /// Loads persisted indexes from `dir`, building and saving any that are
    /// missing or stale.
    pub fn load_or_build(
        dir: &Path,
        kb: &KnowledgeBase,
        doc: &Document,
        config: &AnswerConfig,
        backend: &dyn Backend,
        cache: &mut EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        Ok(Self {
            pages: crate::retrieval::load_or_build_page_index(
                dir,
                Some(kb),
                doc,
                config.index_mode,
                config.retriever,
                Some(backend),
                cache,
            )?,
            elements: crate::retrieval::load_or_build_element_index(dir, Some(kb), doc, config.retriever, Some(backend), cache)?,
        }
        .with_bm25(config.bm25))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub query: String,
    pub query_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<QueryPlan>,
    pub activated: Vec<AgentLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_pages: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_ranking: Option<Vec<RankedPage>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_ranking: Option<Vec<RankedElement>>,
    /// Pages and elements handed to the agents.
    pub context: Provenance,
    pub answers: Vec<AgentAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<FinalAnswer>,
    pub prompts: Vec<PromptRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trace {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serialises");
        s.push('\n');
        s
    }

    /// Writes `<dir>/<query_hash>.json`.
    pub fn save(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("{}.json", self.query_hash));
        write_json_atomic(&path, self)?;
        Ok(path)
    }
}

pub fn query_hash(query: &str) -> String {
    sha256_hex(query.as_bytes())[..16].to_string()
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("retrieval failed: {source}")]
    Retrieval {
        #[source]
        source: RetrievalError,
        trace: Box<Trace>,
    },
    #[error("every activated agent failed: {summary}")]
    AllAgentsFailed { summary: String, trace: Box<Trace> },
}

impl QueryError {
    pub fn trace(&self) -> Option<&Trace> {
        match self {
            QueryError::EmptyQuery => None,
            QueryError::Retrieval { trace, .. } | QueryError::AllAgentsFailed { trace, .. } => Some(trace),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub answer: FinalAnswer,
    pub trace: Trace,
}

/// Answers `query` over `doc` and its knowledge base.
pub fn answer_query(
    doc: &Document,
    kb: &KnowledgeBase,
    indexes: &Indexes,
    query: &str,
    config: &AnswerConfig,
    backend: &dyn Backend,
) -> Result<QueryOutcome, QueryError> {
    if query.trim().is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    let log = PromptLog::new();
    let mut trace = Trace {
        query: query.to_string(),
        query_hash: query_hash(query),
        gold_pages: config.gold_pages.clone(),
        ..Default::default()
    };
    let gold = config.gold_pages.is_some();
    let plan = plan_query(query, backend, &log, config.subqueries && !gold, config.subquery_cap)
        .map_err(|_| QueryError::EmptyQuery)?;
    let case = plan.case;
    trace.activated = case.agents().to_vec();
    trace.plan = Some(plan.clone());

    let fail = |trace: &mut Trace, log: &PromptLog, source: RetrievalError| {
        trace.prompts = log.records();
        trace.error = Some(source.to_string());
        QueryError::Retrieval {
            source,
            trace: Box::new(trace.clone()),
        }
    };

    let mut pages: Vec<u32> = Vec::new();
    let mut elements: Vec<String> = Vec::new();
    if let Some(gold_pages) = &config.gold_pages {
        pages = gold_pages.clone();
        elements = doc
            .pages
            .iter()
            .filter(|p| gold_pages.contains(&p.index))
            .flat_map(|p| p.elements.iter().map(|e| e.element_id.clone()))
            .collect();
    } else {
        let embed = Some(backend);
        if case.activates(AgentLevel::Page) {
            match retrieve_pages(&plan, &indexes.pages, config.k_pages, embed) {
                Ok(r) => {
                    pages = r.iter().map(|p| p.page_index).collect();
                    trace.page_ranking = Some(r);
                }
                Err(e) => return Err(fail(&mut trace, &log, e)),
            }
        }
        if case.activates(AgentLevel::Element) {
            match retrieve_elements(&plan, &indexes.elements, config.k_elements, embed) {
                Ok(r) => {
                    elements = r.iter().map(|e| e.element_id.clone()).collect();
                    trace.element_ranking = Some(r);
                }
                Err(e) => return Err(fail(&mut trace, &log, e)),
            }
        }
    }
    if case.activates(AgentLevel::Page) {
        trace.context.pages = pages.iter().copied().collect();
    }
    if case.activates(AgentLevel::Element) {
        trace.context.elements = elements.iter().cloned().collect();
    }

    // global and element agents are independent; the page agent needs the global answer
    let (global, page, element) = std::thread::scope(|s| {
        let element = case
            .activates(AgentLevel::Element)
            .then(|| s.spawn(|| answer_element(kb, doc, query, &elements, backend, &log)));
        let global = case
            .activates(AgentLevel::Global)
            .then(|| answer_global(kb, doc, query, backend, &log));
        let page = case
            .activates(AgentLevel::Page)
            .then(|| answer_page(kb, doc, query, &pages, global.as_ref(), backend, &log));
        let element = element.map(|h| h.join().expect("element agent panicked"));
        (global, page, element)
    });
    let answers: Vec<AgentAnswer> = [global, page, element].into_iter().flatten().collect();
    trace.answers = answers.clone();

    let usable: Vec<AgentAnswer> = answers.iter().filter(|a| a.is_usable()).cloned().collect();
    let final_answer = if usable.is_empty() {
        // an agent with nothing retrieved still gives the sentinel answer
        match answers.iter().find(|a| a.insufficient_context) {
            Some(a) => FinalAnswer {
                answer: a.answer.clone(),
                reasoning: String::new(),
                mode: if answers.len() == 1 {
                    AnswerMode::DirectSingleAgent
                } else {
                    AnswerMode::DegradedDirect
                },
                contributing: vec![a.clone()],
                provenance: Provenance::default(),
            },
            None => {
                let summary = answers
                    .iter()
                    .map(|a| format!("{}: {}", a.level.name(), a.error.as_deref().unwrap_or("no answer")))
                    .collect::<Vec<_>>()
                    .join("; ");
                trace.prompts = log.records();
                trace.error = Some(summary.clone());
                return Err(QueryError::AllAgentsFailed {
                    summary,
                    trace: Box::new(trace),
                });
            }
        }
    } else if answers.len() == 1 {
        direct(usable, AnswerMode::DirectSingleAgent)
    } else if usable.len() == 1 {
        direct(usable, AnswerMode::DegradedDirect)
    } else if answers_agree(&usable) {
        direct(usable, AnswerMode::DirectAgreement)
    } else {
        let rasters = read_rasters(doc, &pages).unwrap_or_else(|e| {
            log::warn!("synthesis without page images: {e}");
            Vec::new()
        });
        synthesize(usable, rasters, query, backend, &log)
    };
    trace.final_answer = Some(final_answer.clone());
    trace.prompts = log.records();
    Ok(QueryOutcome {
        answer: final_answer,
        trace,
    })
}
