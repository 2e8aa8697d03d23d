//! Query-agnostic knowledge construction at global, page and element level.
//!
//! Build order:
//!
//! 1. global draft from the first (up to) three page rasters;
//! 2. page knowledge, strictly sequential: page `i` sees its raster, the
//!    global draft and the full knowledge of page `i - 1`;
//! 3. one refinement call that rewrites the global knowledge from all page
//!    summaries;
//! 4. element knowledge, one call per element, each seeing the page raster
//!    with that element outlined, the global knowledge and its page's
//!    knowledge. Element calls are independent and run concurrently.
//!
//! With a knowledge-base directory every stage is persisted as it completes,
//! so a failed build can be resumed.

mod annotate;
mod parse;
pub mod prompts;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::annotate::{annotate_page, label_rect, AnnotateError};
use self::parse::{bullet_items, first_paragraph, page_mentions, parse_sections, slide_lines, strip_emphasis};
use self::prompts::{ELEMENT_FIELDS, GLOBAL_SECTIONS, PROMPT_VERSION};
use crate::document::{Document, Element, Page};
use crate::llm::{Backend, BackendError, ChatMessage, ChatRequest, Part, PromptLog};
use crate::util::{file_safe, write_atomic, write_json_atomic};

/// Number of leading pages shown to the global agent.
pub const GLOBAL_SAMPLE_PAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideLine {
    pub page: u32,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalKnowledge {
    pub title: String,
    pub objective: String,
    pub structure_overview: Vec<SlideLine>,
    pub key_insights: Vec<String>,
    pub audience: String,
    pub tone: String,
    /// Verbatim agent output; this is what downstream prompts embed.
    pub raw_markdown: String,
    /// Set when the output did not contain all six sections.
    pub parse_warning: bool,
    /// Whether the refinement pass over all pages succeeded.
    pub refined: bool,
}

impl GlobalKnowledge {
    /// Parses the six-section markdown. Missing sections leave every
    /// structured field empty and set `parse_warning`.
    pub fn parse(raw: &str) -> Self {
        let sections = parse_sections(raw, &GLOBAL_SECTIONS);
        let mut kg = GlobalKnowledge {
            raw_markdown: raw.to_string(),
            ..Default::default()
        };
        if GLOBAL_SECTIONS.iter().any(|s| !sections.contains_key(*s)) {
            kg.parse_warning = true;
            return kg;
        }
        let flat = |name: &str| strip_emphasis(&sections[name].lines().map(str::trim).collect::<Vec<_>>().join(" "));
        kg.title = flat("Title");
        kg.objective = flat("Objective");
        kg.audience = flat("Audience");
        kg.tone = flat("Tone");
        kg.key_insights = bullet_items(&sections["Key Insights"]);
        kg.structure_overview = slide_lines(&sections["Structure Overview"])
            .into_iter()
            .map(|(page, text)| SlideLine { page, text })
            .collect();
        kg
    }

    pub fn covered_pages(&self) -> Vec<u32> {
        self.structure_overview.iter().map(|l| l.page).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageKnowledge {
    pub page_index: u32,
    pub summary: String,
    pub cross_page_links: Vec<u32>,
    /// Verbatim agent output.
    pub raw_text: String,
}

impl PageKnowledge {
    pub fn parse(page_index: u32, page_count: usize, raw: &str) -> Self {
        let sections = parse_sections(raw, &["Summary"]);
        let summary = match sections.get("Summary") {
            Some(s) if !s.is_empty() => first_paragraph(s),
            _ => first_paragraph(raw),
        };
        let cross_page_links = page_mentions(raw)
            .into_iter()
            .filter(|&p| p != page_index && p >= 1 && p as usize <= page_count)
            .collect();
        Self {
            page_index,
            summary,
            cross_page_links,
            raw_text: raw.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Importance {
    Low,
    Medium,
    High,
}

impl Importance {
    /// First of `low`/`medium`/`high` appearing in `text`, as a whole word.
    pub fn find(text: &str) -> Option<Importance> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .find_map(|w| match w {
                "low" => Some(Importance::Low),
                "medium" => Some(Importance::Medium),
                "high" => Some(Importance::High),
                _ => None,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementKnowledge {
    pub element_id: String,
    pub page_index: u32,
    pub position: String,
    pub verbatim_content: String,
    pub semantic_role: String,
    pub functional_purpose: String,
    pub relation_to_slide: String,
    pub inferred_importance: Option<Importance>,
    pub raw_text: String,
    pub parse_warning: bool,
}

impl ElementKnowledge {
    pub fn parse(element_id: &str, page_index: u32, raw: &str) -> Self {
        let s = parse_sections(raw, &ELEMENT_FIELDS);
        let get = |k: &str| s.get(k).map(|v| strip_emphasis(&v.replace('\n', " "))).unwrap_or_default();
        let inferred_importance = s.get("Inferred Importance").and_then(|v| Importance::find(v));
        let semantic_role = get("Semantic Role");
        let functional_purpose = get("Functional Purpose");
        let relation_to_slide = get("Relation to Slide");
        let parse_warning = semantic_role.is_empty()
            || functional_purpose.is_empty()
            || relation_to_slide.is_empty()
            || inferred_importance.is_none();
        Self {
            element_id: element_id.to_string(),
            page_index,
            position: get("Position on Slide"),
            verbatim_content: get("Verbatim Content"),
            semantic_role,
            functional_purpose,
            relation_to_slide,
            inferred_importance,
            raw_text: raw.to_string(),
            parse_warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementFailure {
    pub element_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildMetadata {
    pub chat_model: String,
    pub embed_model: String,
    pub prompt_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    pub doc_id: String,
    pub global: GlobalKnowledge,
    pub pages: Vec<PageKnowledge>,
    pub elements: Vec<ElementKnowledge>,
    pub element_failures: Vec<ElementFailure>,
    pub build_metadata: BuildMetadata,
}

impl KnowledgeBase {
    pub fn page(&self, index: u32) -> Option<&PageKnowledge> {
        self.pages.iter().find(|p| p.page_index == index)
    }

    pub fn element(&self, element_id: &str) -> Option<&ElementKnowledge> {
        self.elements.iter().find(|e| e.element_id == element_id)
    }

    /// Checks that the knowledge base covers `doc`: one page record per page,
    /// and every element either described once or listed as failed.
    pub fn check_coverage(&self, doc: &Document) -> Result<(), String> {
        if self.doc_id != doc.doc_id {
            return Err(format!(
                "knowledge base is for {:?}, document is {:?}",
                self.doc_id, doc.doc_id
            ));
        }
        let pages: Vec<u32> = self.pages.iter().map(|p| p.page_index).collect();
        let expected: Vec<u32> = doc.pages.iter().map(|p| p.index).collect();
        if pages != expected {
            return Err(format!("page knowledge covers {pages:?}, document has {expected:?}"));
        }
        let mut seen = HashSet::new();
        for e in &self.elements {
            if doc.element(&e.element_id).is_none() {
                return Err(format!("element knowledge for unknown element {:?}", e.element_id));
            }
            if !seen.insert(e.element_id.as_str()) {
                return Err(format!("element {:?} described twice", e.element_id));
            }
        }
        let failed: HashSet<&str> = self.element_failures.iter().map(|f| f.element_id.as_str()).collect();
        if let Some(missing) = doc
            .elements()
            .find(|e| !seen.contains(e.element_id.as_str()) && !failed.contains(e.element_id.as_str()))
        {
            return Err(format!("element {:?} has neither knowledge nor a logged failure", missing.element_id));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, doc_dir: Option<&Path>) -> Result<(), KnowledgeError> {
        let store = KbStore::new(dir);
        store.save_global(&self.global)?;
        for p in &self.pages {
            store.save_page(p)?;
        }
        for e in &self.elements {
            store.save_element(e)?;
        }
        store.save_meta(&KbMeta {
            doc_id: self.doc_id.clone(),
            doc_dir: doc_dir.map(|p| p.to_string_lossy().into_owned()),
            build_metadata: self.build_metadata.clone(),
            global_parse_warning: self.global.parse_warning,
            global_refined: self.global.refined,
            element_failures: self.element_failures.clone(),
        })?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, KnowledgeError> {
        let store = KbStore::new(dir);
        let meta = store.load_meta()?;
        let global = store
            .load_global(&meta)?
            .ok_or_else(|| KnowledgeError::Store(format!("{}: missing global.md", dir.display())))?;
        Ok(Self {
            doc_id: meta.doc_id,
            global,
            pages: store.load_pages()?,
            elements: store.load_elements()?,
            element_failures: meta.element_failures,
            build_metadata: meta.build_metadata,
        })
    }
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("{stage} agent failed: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("page agent failed on page {page} ({completed} earlier pages kept): {source}")]
    PageFailed {
        page: u32,
        completed: usize,
        #[source]
        source: BackendError,
    },
    #[error("cannot read raster for page {page}: {source}")]
    Raster {
        page: u32,
        #[source]
        source: std::io::Error,
    },
    #[error("knowledge store: {0}")]
    Store(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const SYSTEM_PROMPT: &str = "You analyse slide decks page by page and element by element. \
Answer only from what the pages show and the context you are given.";

fn request(task: String, images: Vec<Vec<u8>>) -> ChatRequest {
    let mut parts = vec![Part::text(task)];
    parts.extend(images.into_iter().map(Part::png));
    ChatRequest::new(vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(parts)])
}

fn raster(doc: &Document, page: &Page) -> Result<Vec<u8>, KnowledgeError> {
    doc.read_raster(page).map_err(|source| KnowledgeError::Raster {
        page: page.index,
        source,
    })
}

/// Drafts global knowledge from the first pages of the deck.
pub fn build_global(doc: &Document, backend: &dyn Backend, log: &PromptLog) -> Result<GlobalKnowledge, KnowledgeError> {
    let sampled = &doc.pages[..doc.pages.len().min(GLOBAL_SAMPLE_PAGES)];
    let images = sampled.iter().map(|p| raster(doc, p)).collect::<Result<Vec<_>, _>>()?;
    let req = request(prompts::global_task(sampled.len(), doc.pages.len()), images);
    let reply = log
        .call(backend, "global", &req)
        .map_err(|source| KnowledgeError::Backend { stage: "global", source })?;
    let kg = GlobalKnowledge::parse(&reply.text);
    if kg.parse_warning {
        log::warn!("global knowledge is missing sections; keeping raw markdown only");
    }
    Ok(kg)
}

pub fn page_prompt_id(index: u32) -> String {
    format!("page-{index:04}")
}

pub fn element_prompt_id(element_id: &str) -> String {
    format!("element-{element_id}")
}

/// Builds page knowledge in page order, each page conditioned on its predecessor.
///
/// `existing` holds already-built pages `1..=j` (from a previous run); building
/// resumes at page `j + 1`. `on_page` is called with each new record before
/// the next page starts. On failure the error names the page; everything
/// before it has already been handed to `on_page`.
pub fn build_pages(
    doc: &Document,
    global: &GlobalKnowledge,
    backend: &dyn Backend,
    log: &PromptLog,
    existing: Vec<PageKnowledge>,
    on_page: &mut dyn FnMut(&PageKnowledge) -> std::io::Result<()>,
) -> Result<Vec<PageKnowledge>, KnowledgeError> {
    let mut out = existing;
    if out.len() > doc.pages.len()
        || out
            .iter()
            .zip(&doc.pages)
            .any(|(k, p)| k.page_index != p.index)
    {
        return Err(KnowledgeError::Store(
            "existing page knowledge does not match the document's pages".into(),
        ));
    }
    for page in &doc.pages[out.len()..] {
        let prev = out.last();
        let task = prompts::page_task(page, doc.pages.len(), global, prev);
        let req = request(task, vec![raster(doc, page)?]);
        let reply = log
            .call(backend, &page_prompt_id(page.index), &req)
            .map_err(|source| KnowledgeError::PageFailed {
                page: page.index,
                completed: out.len(),
                source,
            })?;
        let pk = PageKnowledge::parse(page.index, doc.pages.len(), &reply.text);
        on_page(&pk)?;
        out.push(pk);
    }
    Ok(out)
}

/// Rewrites the global knowledge with every page summary in view. A failed
/// call keeps the draft with `refined == false`.
pub fn refine_global(
    draft: &GlobalKnowledge,
    pages: &[PageKnowledge],
    backend: &dyn Backend,
    log: &PromptLog,
) -> GlobalKnowledge {
    let req = request(prompts::refine_task(draft, pages), Vec::new());
    match log.call(backend, "global-refine", &req) {
        Ok(reply) => GlobalKnowledge {
            refined: true,
            ..GlobalKnowledge::parse(&reply.text)
        },
        Err(e) => {
            log::warn!("global refinement failed, keeping draft: {e}");
            GlobalKnowledge {
                refined: false,
                ..draft.clone()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ElementBuild {
    /// In document order.
    pub records: Vec<ElementKnowledge>,
    pub failures: Vec<ElementFailure>,
}

fn describe_element(
    doc: &Document,
    page: &Page,
    element: &Element,
    global: &GlobalKnowledge,
    pages: &[PageKnowledge],
    backend: &dyn Backend,
    log: &PromptLog,
) -> Result<ElementKnowledge, String> {
    let bytes = doc.read_raster(page).map_err(|e| format!("raster: {e}"))?;
    let annotated = annotate_page(page, &bytes, &[element]).map_err(|e| e.to_string())?;
    let pk = pages.iter().find(|p| p.page_index == page.index);
    let req = request(prompts::element_task(element, page, global, pk), vec![annotated]);
    let reply = log
        .call(backend, &element_prompt_id(&element.element_id), &req)
        .map_err(|e| e.to_string())?;
    Ok(ElementKnowledge::parse(&element.element_id, page.index, &reply.text))
}

/// Describes every element not already in `skip`, using up to
/// `backend.max_in_flight()` concurrent calls. Failures are collected, not fatal.
pub fn build_elements(
    doc: &Document,
    global: &GlobalKnowledge,
    pages: &[PageKnowledge],
    backend: &dyn Backend,
    log: &PromptLog,
    skip: &HashSet<String>,
) -> ElementBuild {
    let todo: Vec<(&Page, &Element)> = doc
        .pages
        .iter()
        .flat_map(|p| p.elements.iter().map(move |e| (p, e)))
        .filter(|(_, e)| !skip.contains(&e.element_id))
        .collect();
    let results: Mutex<Vec<Option<Result<ElementKnowledge, String>>>> = Mutex::new(vec![None; todo.len()]);
    let next = AtomicUsize::new(0);
    let workers = backend.max_in_flight().clamp(1, todo.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((page, element)) = todo.get(i) else { break };
                let r = describe_element(doc, page, element, global, pages, backend, log);
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });
    let mut out = ElementBuild::default();
    for ((_, element), r) in todo.iter().zip(results.into_inner().expect("results poisoned")) {
        match r.expect("every element visited") {
            Ok(k) => out.records.push(k),
            Err(error) => {
                log::warn!("element {} failed: {error}", element.element_id);
                out.failures.push(ElementFailure {
                    element_id: element.element_id.clone(),
                    error,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Persist every stage here as it completes.
    pub kb_dir: Option<PathBuf>,
    /// Reuse whatever a previous run in `kb_dir` already persisted.
    pub resume: bool,
    /// Recorded in the metadata when set; left out otherwise so scripted
    /// builds stay byte-identical.
    pub timestamp: Option<String>,
    /// Skip the global refinement pass.
    pub skip_refine: bool,
}

/// Runs the full knowledge-construction pipeline for `doc`.
pub fn build_knowledge_base(
    doc: &Document,
    backend: &dyn Backend,
    options: &BuildOptions,
    log: &PromptLog,
) -> Result<KnowledgeBase, KnowledgeError> {
    let store = options.kb_dir.as_deref().map(KbStore::new);
    if let Some(store) = &store {
        if !options.resume {
            store.clear()?;
        }
    }
    let result = build_with_store(doc, backend, options, log, store.as_ref());
    if let Some(store) = &store {
        log.save_dir(&store.prompts_dir())?;
    }
    result
}

fn build_with_store(
    doc: &Document,
    backend: &dyn Backend,
    options: &BuildOptions,
    log: &PromptLog,
    store: Option<&KbStore>,
) -> Result<KnowledgeBase, KnowledgeError> {
    let mut meta = KbMeta {
        doc_id: doc.doc_id.clone(),
        doc_dir: Some(doc.dir.to_string_lossy().into_owned()),
        build_metadata: BuildMetadata {
            chat_model: backend.chat_model().to_string(),
            embed_model: backend.embed_model().to_string(),
            prompt_version: PROMPT_VERSION.to_string(),
            built_at: options.timestamp.clone(),
        },
        global_parse_warning: false,
        global_refined: false,
        element_failures: Vec::new(),
    };
    let resume = options.resume && store.is_some();
    let previous = match store {
        Some(s) if resume && s.meta_path().is_file() => {
            let m = s.load_meta()?;
            if m.doc_id != doc.doc_id {
                return Err(KnowledgeError::Store(format!(
                    "cannot resume: knowledge base belongs to {:?}",
                    m.doc_id
                )));
            }
            Some(m)
        }
        _ => None,
    };

    let mut global = match (store, &previous) {
        (Some(s), Some(m)) => s.load_global(m)?,
        _ => None,
    }
    .map_or_else(|| build_global(doc, backend, log), Ok)?;
    let persist_meta = |meta: &mut KbMeta, global: &GlobalKnowledge| -> Result<(), KnowledgeError> {
        meta.global_parse_warning = global.parse_warning;
        meta.global_refined = global.refined;
        if let Some(s) = store {
            s.save_global(global)?;
            s.save_meta(meta)?;
        }
        Ok(())
    };
    persist_meta(&mut meta, &global)?;

    let existing = match store {
        Some(s) if resume => s.load_pages()?,
        _ => Vec::new(),
    };
    let pages = build_pages(doc, &global, backend, log, existing, &mut |pk| match store {
        Some(s) => s.save_page(pk),
        None => Ok(()),
    })?;

    if !global.refined && !options.skip_refine {
        global = refine_global(&global, &pages, backend, log);
        persist_meta(&mut meta, &global)?;
    }

    let mut elements: BTreeMap<String, ElementKnowledge> = match store {
        Some(s) if resume => s
            .load_elements()?
            .into_iter()
            .filter(|e| doc.element(&e.element_id).is_some())
            .map(|e| (e.element_id.clone(), e))
            .collect(),
        _ => BTreeMap::new(),
    };
    let skip: HashSet<String> = elements.keys().cloned().collect();
    let built = build_elements(doc, &global, &pages, backend, log, &skip);
    for rec in built.records {
        if let Some(s) = store {
            s.save_element(&rec)?;
        }
        elements.insert(rec.element_id.clone(), rec);
    }
    let ordered: Vec<ElementKnowledge> = doc
        .elements()
        .filter_map(|e| elements.remove(&e.element_id))
        .collect();
    meta.element_failures = built.failures;
    persist_meta(&mut meta, &global)?;

    Ok(KnowledgeBase {
        doc_id: doc.doc_id.clone(),
        global,
        pages,
        elements: ordered,
        element_failures: meta.element_failures,
        build_metadata: meta.build_metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbMeta {
    pub doc_id: String,
    /// Directory of the ingested document the knowledge base was built from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_dir: Option<String>,
    pub build_metadata: BuildMetadata,
    pub global_parse_warning: bool,
    pub global_refined: bool,
    #[serde(default)]
    pub element_failures: Vec<ElementFailure>,
}

/// On-disk layout of a knowledge base:
///
/// ```text
/// <kbdir>/global.md
/// <kbdir>/pages/<index>.json
/// <kbdir>/elements/<element_id>.json
/// <kbdir>/meta.json
/// <kbdir>/prompts/<call id>.json
/// <kbdir>/index/...
/// <kbdir>/traces/<query hash>.json
/// ```
#[derive(Debug, Clone)]
pub struct KbStore {
    dir: PathBuf,
}

impl KbStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta_path(&self) -> PathBuf {
        self.dir.join("meta.json")
    }

    pub fn global_path(&self) -> PathBuf {
        self.dir.join("global.md")
    }

    pub fn pages_dir(&self) -> PathBuf {
        self.dir.join("pages")
    }

    pub fn elements_dir(&self) -> PathBuf {
        self.dir.join("elements")
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.dir.join("prompts")
    }

    pub fn index_dir(&self) -> PathBuf {
        self.dir.join("index")
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.dir.join("traces")
    }

    /// Removes everything a previous build wrote.
    pub fn clear(&self) -> std::io::Result<()> {
        for d in [
            self.pages_dir(),
            self.elements_dir(),
            self.prompts_dir(),
            self.index_dir(),
            self.traces_dir(),
        ] {
            if d.is_dir() {
                std::fs::remove_dir_all(&d)?;
            }
        }
        for f in [self.meta_path(), self.global_path()] {
            if f.is_file() {
                std::fs::remove_file(&f)?;
            }
        }
        Ok(())
    }

    pub fn save_global(&self, kg: &GlobalKnowledge) -> std::io::Result<()> {
        write_atomic(&self.global_path(), kg.raw_markdown.as_bytes())
    }

    pub fn load_global(&self, meta: &KbMeta) -> Result<Option<GlobalKnowledge>, KnowledgeError> {
        let path = self.global_path();
        if !path.is_file() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(&path)?;
        let mut kg = GlobalKnowledge::parse(&raw);
        kg.refined = meta.global_refined;
        Ok(Some(kg))
    }

    pub fn save_page(&self, pk: &PageKnowledge) -> std::io::Result<()> {
        write_json_atomic(&self.pages_dir().join(format!("{}.json", pk.page_index)), pk)
    }

    /// Loads the contiguous run of pages `1..=j` present on disk.
    pub fn load_pages(&self) -> Result<Vec<PageKnowledge>, KnowledgeError> {
        let mut out = Vec::new();
        for index in 1u32.. {
            let path = self.pages_dir().join(format!("{index}.json"));
            if !path.is_file() {
                break;
            }
            out.push(read_json(&path)?);
        }
        Ok(out)
    }

    pub fn save_element(&self, ek: &ElementKnowledge) -> std::io::Result<()> {
        write_json_atomic(
            &self.elements_dir().join(format!("{}.json", file_safe(&ek.element_id))),
            ek,
        )
    }

    pub fn load_elements(&self) -> Result<Vec<ElementKnowledge>, KnowledgeError> {
        let dir = self.elements_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| read_json(p)).collect()
    }

    pub fn save_meta(&self, meta: &KbMeta) -> std::io::Result<()> {
        write_json_atomic(&self.meta_path(), meta)
    }

    pub fn load_meta(&self) -> Result<KbMeta, KnowledgeError> {
        let path = self.meta_path();
        if !path.is_file() {
            return Err(KnowledgeError::Store(format!("{}: not a knowledge base (no meta.json)", self.dir.display())));
        }
        read_json(&path)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, KnowledgeError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| KnowledgeError::Store(format!("{}: {e}", path.display())))
}
