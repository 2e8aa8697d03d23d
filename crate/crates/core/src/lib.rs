//! Hierarchical agentic question answering over multi-page visual documents.
//!
//! The pipeline has two stages. Knowledge construction turns a document
//! (page rasters plus OCR/layout elements) into a query-agnostic knowledge
//! base at three levels: global, page and element. Inference classifies a
//! query, activates the matching agent levels, retrieves pages and elements,
//! and either returns the agreed answer or asks a synthesizer to reconcile
//! disagreeing agents.
//!
//! Module map:
//!
//! * [`document`] - documents, pages, elements, bounding boxes, on-disk format
//! * [`merge`] - graph-based merging of fragmented OCR boxes
//! * [`llm`] - chat/embedding backends (OpenAI-compatible HTTP and scripted)
//! * [`knowledge`] - global/page/element knowledge construction
//! * [`retrieval`] - query classification, subqueries, BM25 and dense retrieval
//! * [`orchestrator`] - per-level agents, answer agreement, synthesis
//! * [`eval`] - QA scoring and ranking metrics

pub mod document;
pub mod eval;
pub mod knowledge;
pub mod llm;
pub mod merge;
pub mod orchestrator;
pub mod retrieval;
mod util;

pub use document::{
    load_document, save_document, validate_document, BoundingBox, Document, DocumentError,
    Element, ElementType, Page, Violation, ViolationCode,
};
pub use knowledge::{
    build_knowledge_base, BuildOptions, ElementKnowledge, GlobalKnowledge, Importance, KbStore,
    KnowledgeBase, KnowledgeError, PageKnowledge,
};
pub use llm::{
    Backend, BackendError, ChatMessage, ChatRequest, Completion, EmbeddingVector, HttpBackend,
    PromptLog, ScriptedBackend,
};
pub use merge::{merge_document, merge_elements, min_box_distance, MergeStats, DEFAULT_TAU};
pub use orchestrator::{
    answer_query, answers_agree, nls, AgentAnswer, AnswerConfig, AnswerMode, FinalAnswer, Indexes,
    Provenance, QueryError, QueryOutcome, Trace,
};
pub use retrieval::{
    bm25_score, AgentLevel, Bm25Params, CorpusStats, IndexMode, QueryCase, QueryPlan, RankedElement, RankedPage,
    Retriever,
};
pub use eval::{normalize_number, numeric_match, token_f1, CanonicalNumber};
