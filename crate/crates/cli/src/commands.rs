use std::collections::HashMap;
use std::path::{Path, PathBuf};

use deckagent_core::eval::{
    load_dataset, rank_eval, run_eval, write_report, Corpus, DatasetRow, EvalOptions, OverallRule, RankOptions,
    RankSetting, SystemOutput,
};
use deckagent_core::knowledge::{BuildOptions, KbStore};
use deckagent_core::retrieval::EmbeddingCache;
use deckagent_core::{
    answer_query, build_knowledge_base, load_document, merge_document, save_document, validate_document, Backend,
    Document, Indexes, KnowledgeBase, KnowledgeError, PromptLog, QueryError,
};

use crate::config::Config;
use crate::error::{input, CliError};
use crate::{Command, Overall};

pub fn run(command: Command, config: &Config) -> Result<(), CliError> {
    match command {
        Command::Ingest { input, out } => ingest(&input, &out, config),
        Command::Build {
            doc,
            kb,
            resume,
            skip_refine,
            timestamp,
        } => build(&doc, kb, resume, skip_refine, timestamp, config),
        Command::Query {
            kb,
            question,
            gt_pages,
            json,
            trace,
            doc,
        } => query(&kb, &question, gt_pages, json, trace, doc.as_deref(), config),
        Command::Eval {
            dataset,
            threads,
            gt_pages,
            overall,
            rel_tol,
            out,
        } => eval(&dataset, threads, gt_pages, overall, rel_tol, out, config),
        Command::RankEval {
            dataset,
            retrievers,
            ks,
            out,
        } => rank(&dataset, &retrievers, ks, out, config),
    }
}

fn ingest(input_dir: &Path, out: &Path, config: &Config) -> Result<(), CliError> {
    let doc = load_document(input_dir)?;
    let (merged, stats) = merge_document(&doc, config.retrieval.tau).map_err(|e| input(e.to_string()))?;
    let violations = validate_document(&merged);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(input(format!("merged document is invalid:\n{}", list.join("\n"))));
    }
    save_document(&merged, out)?;
    println!(
        "merged {} → {} elements ({} pages, tau {})",
        stats.elements_before,
        stats.elements_after,
        merged.pages.len(),
        config.retrieval.tau
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn kb_dir_for(doc_id: &str, explicit: Option<PathBuf>, config: &Config) -> Result<PathBuf, CliError> {
    explicit
        .or_else(|| config.paths.kb_dir.as_ref().map(|d| d.join(doc_id)))
        .ok_or_else(|| input("no knowledge-base directory: pass one or set --kb-dir"))
}

fn build(
    doc_dir: &Path,
    kb: Option<PathBuf>,
    resume: bool,
    skip_refine: bool,
    timestamp: Option<String>,
    config: &Config,
) -> Result<(), CliError> {
    // the knowledge base records this path, so make it independent of the cwd
    let doc_dir = doc_dir
        .canonicalize()
        .map_err(|e| input(format!("document {}: {e}", doc_dir.display())))?;
    let doc = load_document(&doc_dir)?;
    let kb_dir = kb_dir_for(&doc.doc_id, kb, config)?;
    let backend = config.backend()?;
    let options = BuildOptions {
        kb_dir: Some(kb_dir.clone()),
        resume,
        timestamp,
        skip_refine,
    };
    let kb = build_knowledge_base(&doc, backend.as_ref(), &options, &PromptLog::new()).map_err(|e| match e {
        KnowledgeError::PageFailed { .. } => CliError::Runtime(format!(
            "{e}\npartial knowledge base kept in {}; rerun with --resume",
            kb_dir.display()
        )),
        other => other.into(),
    })?;
    println!(
        "built {}: {} pages, {} elements, {} element failures{}",
        kb.doc_id,
        kb.pages.len(),
        kb.elements.len(),
        kb.element_failures.len(),
        if kb.global.parse_warning { ", global knowledge unstructured" } else { "" }
    );
    for f in &kb.element_failures {
        eprintln!("warning: element {} failed: {}", f.element_id, f.error);
    }
    println!("wrote {}", kb_dir.display());
    Ok(())
}

/// A built knowledge base with its document and retrieval indexes.
struct Loaded {
    doc: Document,
    kb: KnowledgeBase,
    indexes: Indexes,
    store: KbStore,
}

fn load_kb(kb_dir: &Path, doc_dir: Option<&Path>, backend: &dyn Backend, config: &Config) -> Result<Loaded, CliError> {
    let store = KbStore::new(kb_dir);
    if !store.meta_path().is_file() {
        return Err(input(format!("{} is not a knowledge base", kb_dir.display())));
    }
    let kb = KnowledgeBase::load(kb_dir).map_err(|e| input(e.to_string()))?;
    let doc_dir = match doc_dir {
        Some(d) => d.to_path_buf(),
        None => store
            .load_meta()
            .map_err(|e| input(e.to_string()))?
            .doc_dir
            .map(PathBuf::from)
            .ok_or_else(|| input("knowledge base does not record its document; pass --doc"))?,
    };
    let doc = load_document(&doc_dir)?;
    if doc.doc_id != kb.doc_id {
        return Err(input(format!(
            "document {:?} does not match knowledge base {:?}",
            doc.doc_id, kb.doc_id
        )));
    }
    let index_dir = store.index_dir();
    let mut cache = EmbeddingCache::open(index_dir.join("embeddings.json"))?;
    let indexes = Indexes::load_or_build(&index_dir, &kb, &doc, &config.answer_config(), backend, &mut cache)?;
    Ok(Loaded { doc, kb, indexes, store })
}

fn query(
    kb_dir: &Path,
    question: &str,
    gt_pages: Option<Vec<u32>>,
    json: bool,
    save_trace: bool,
    doc_dir: Option<&Path>,
    config: &Config,
) -> Result<(), CliError> {
    let backend = config.backend()?;
    let loaded = load_kb(kb_dir, doc_dir, backend.as_ref(), config)?;
    let mut answer_config = config.answer_config();
    answer_config.gold_pages = gt_pages;
    let traces = loaded.store.traces_dir();
    match answer_query(&loaded.doc, &loaded.kb, &loaded.indexes, question, &answer_config, backend.as_ref()) {
        Ok(out) => {
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&out.answer).map_err(|e| CliError::Runtime(e.to_string()))?
                );
            } else {
                let a = &out.answer;
                println!("Answer: {}", a.answer);
                println!("Mode: {}", serde_json::to_value(a.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
                println!("Pages: {}", join(a.provenance.pages.iter()));
                println!("Elements: {}", join(a.provenance.elements.iter()));
            }
            if save_trace {
                std::fs::create_dir_all(&traces)?;
                eprintln!("trace: {}", out.trace.save(&traces)?.display());
            }
            Ok(())
        }
        Err(QueryError::EmptyQuery) => Err(input("question is empty")),
        Err(e) => {
            let mut msg = e.to_string();
            if let Some(trace) = e.trace() {
                std::fs::create_dir_all(&traces)?;
                msg.push_str(&format!("\npartial trace: {}", trace.save(&traces)?.display()));
            }
            Err(match e {
                QueryError::Retrieval { source, .. } => match CliError::from(source) {
                    CliError::Input(_) => CliError::Input(msg),
                    CliError::Runtime(_) => CliError::Runtime(msg),
                },
                _ => CliError::Runtime(msg),
            })
        }
    }
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    let v: Vec<String> = items.map(|x| x.to_string()).collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(", ")
    }
}

fn load_rows(dataset: &Path) -> Result<Vec<DatasetRow>, CliError> {
    if !dataset.is_file() {
        return Err(input(format!("dataset {} not found", dataset.display())));
    }
    let rows = load_dataset(dataset)?;
    if rows.is_empty() {
        return Err(input(format!("dataset {} is empty", dataset.display())));
    }
    Ok(rows)
}

/// Loads every document the dataset mentions. Unknown ones are logged and
/// left out; their rows then fail individually.
fn load_corpora(rows: &[DatasetRow], backend: &dyn Backend, config: &Config) -> Result<HashMap<String, Loaded>, CliError> {
    let Some(root) = &config.paths.kb_dir else {
        return Err(input("--kb-dir (or paths.kb_dir) is required to resolve dataset documents"));
    };
    let mut out = HashMap::new();
    for row in rows {
        if out.contains_key(&row.doc_id) {
            continue;
        }
        let doc_dir = config.paths.docs_dir.as_ref().map(|d| d.join(&row.doc_id));
        match load_kb(&root.join(&row.doc_id), doc_dir.as_deref(), backend, config) {
            Ok(l) => {
                out.insert(row.doc_id.clone(), l);
            }
            Err(CliError::Input(e)) => log::error!("document {:?} unavailable: {e}", row.doc_id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn report_path(out: Option<PathBuf>, config: &Config, name: &str) -> PathBuf {
    out.unwrap_or_else(|| config.paths.reports_dir.join(name))
}

#[allow(clippy::too_many_arguments)]
fn eval(
    dataset: &Path,
    threads: usize,
    use_gt: bool,
    overall: Overall,
    rel_tol: f64,
    out: Option<PathBuf>,
    config: &Config,
) -> Result<(), CliError> {
    let rows = load_rows(dataset)?;
    let backend = config.backend()?;
    let corpora = load_corpora(&rows, backend.as_ref(), config)?;
    let base = config.answer_config();
    let system = |row: &DatasetRow| -> Result<SystemOutput, String> {
        let c = corpora
            .get(&row.doc_id)
            .ok_or_else(|| format!("unknown document {:?}", row.doc_id))?;
        let mut cfg = base.clone();
        if use_gt {
            cfg.gold_pages = Some(row.gt_pages.clone().ok_or("row has no gt_pages")?);
        }
        let out = answer_query(&c.doc, &c.kb, &c.indexes, &row.question, &cfg, backend.as_ref()).map_err(|e| {
            log::error!("{:?}: {e}", row.question);
            e.to_string()
        })?;
        Ok(SystemOutput {
            prediction: out.answer.answer,
            page_ranking: out
                .trace
                .page_ranking
                .map(|r| r.into_iter().map(|p| p.page_index).collect()),
        })
    };
    let options = EvalOptions {
        threads: threads.max(1),
        rel_tol,
        overall: match overall {
            Overall::RecordMean => OverallRule::RecordMean,
            Overall::RouteMean => OverallRule::RouteMean,
        },
        ..Default::default()
    };
    let report = run_eval(&rows, system, &options)?;
    let table = report.table();
    let path = report_path(out, config, "eval.json");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_report(&report, &table, &path)?;
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}

fn rank(
    dataset: &Path,
    retrievers: &[deckagent_core::Retriever],
    ks: Vec<usize>,
    out: Option<PathBuf>,
    config: &Config,
) -> Result<(), CliError> {
    if ks.contains(&0) {
        return Err(input("k values must be ≥ 1"));
    }
    let rows = load_rows(dataset)?;
    let backend = config.backend()?;
    let loaded = load_corpora(&rows, backend.as_ref(), config)?;
    let corpora: HashMap<String, Corpus<'_>> = loaded
        .iter()
        .map(|(id, l)| (id.clone(), Corpus { doc: &l.doc, kb: Some(&l.kb) }))
        .collect();
    let options = RankOptions {
        ks,
        subquery_cap: config.retrieval.subquery_cap,
        bm25: config.retrieval.bm25,
    };
    let report = rank_eval(&rows, &corpora, backend.as_ref(), &RankSetting::grid(retrievers), &options)?;
    let table = report.table(&options.ks);
    let path = report_path(out, config, "rank_eval.json");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_report(&report, &table, &path)?;
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}
