//! Scoring of answers and page rankings over a question dataset.

mod metrics;
mod number;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::metrics::{
    answer_tokens, first_relevant, hit_at_k, is_stopword, mrr, ndcg_at_k, recall_at_k, token_f1, MetricError,
};
pub use self::number::{
    extract_numbers, is_numeric_answer, normalize_number, numeric_match, parse_whole_number, CanonicalNumber,
};
use crate::document::Document;
use crate::knowledge::KnowledgeBase;
use crate::llm::{Backend, PromptLog};
use crate::retrieval::{
    generate_subqueries, index_pages, retrieve_pages, Bm25Params, EmbeddingCache, IndexMode, PageIndex, QueryCase, QueryPlan,
    RetrievalError, Retriever, DEFAULT_SUBQUERY_CAP,
};
use crate::util::{write_atomic, write_json_atomic};

/// One dataset line: `{"doc_id", "question", "answer", "gt_pages"?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub doc_id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pages: Option<Vec<u32>>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRow>, EvalError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow = serde_json::from_str(line).map_err(|e| EvalError::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        if row.question.trim().is_empty() {
            return Err(EvalError::Dataset {
                line: i + 1,
                message: "empty question".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(rows)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRow>, EvalError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRoute {
    Numeric,
    Text,
}

/// How the Overall figure is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverallRule {
    /// Mean over all records of 0/1 (numeric) or F1 (text).
    #[default]
    RecordMean,
    /// Mean of the Num and F1 figures.
    RouteMean,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threads: usize,
    /// Relative tolerance for numeric matches; 0 is exact.
    pub rel_tol: f64,
    pub ks: Vec<usize>,
    pub overall: OverallRule,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            rel_tol: 0.0,
            ks: vec![1, 3, 5],
            overall: OverallRule::RecordMean,
        }
    }
}

/// What the system under test returns for one question.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SystemOutput {
    pub prediction: String,
    /// Retrieved pages, best first, when the system retrieved any.
    pub page_ranking: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub doc_id: String,
    pub question: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_pages: Option<Vec<u32>>,
    pub prediction: String,
    pub route: ScoreRoute,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_ranking: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Scores a prediction against the gold answer.
pub fn score_answer(prediction: &str, gold: &str, rel_tol: f64) -> (ScoreRoute, f64) {
    if is_numeric_answer(gold) {
        let ok = numeric_match(prediction, gold, rel_tol);
        (ScoreRoute::Numeric, if ok { 1.0 } else { 0.0 })
    } else {
        (ScoreRoute::Text, token_f1(prediction, gold))
    }
}

fn evaluate_row<F>(row: &DatasetRow, system: &F, rel_tol: f64) -> EvalRecord
where
    F: Fn(&DatasetRow) -> Result<SystemOutput, String>,
{
    let (output, error) = match system(row) {
        Ok(o) => (o, None),
        Err(e) => {
            log::warn!("{} / {:?}: {e}", row.doc_id, row.question);
            (SystemOutput::default(), Some(e))
        }
    };
    let (route, mut score) = score_answer(&output.prediction, &row.answer, rel_tol);
    if error.is_some() {
        score = 0.0;
    }
    EvalRecord {
        doc_id: row.doc_id.clone(),
        question: row.question.clone(),
        gold_answer: row.answer.clone(),
        gold_pages: row.gt_pages.clone(),
        prediction: output.prediction,
        route,
        score,
        numeric_correct: (route == ScoreRoute::Numeric).then_some(score == 1.0),
        f1: (route == ScoreRoute::Text).then_some(score),
        page_ranking: output.page_ranking,
        error,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub queries: usize,
    pub mrr: f64,
    pub hit: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

impl RankingSummary {
    /// Averages the metrics over `(ranking, relevant)` pairs; pairs with no
    /// relevant pages are skipped. Figures are percentages.
    pub fn compute(pairs: &[(Vec<u32>, BTreeSet<u32>)], ks: &[usize]) -> Option<RankingSummary> {
        let pairs: Vec<_> = pairs.iter().filter(|(_, rel)| !rel.is_empty()).collect();
        if pairs.is_empty() {
            return None;
        }
        let n = pairs.len() as f64;
        let ranks: Vec<Option<usize>> = pairs.iter().map(|(r, rel)| first_relevant(r, rel)).collect();
        let mean = |f: &dyn Fn(&Vec<u32>, &BTreeSet<u32>) -> f64| 100.0 * pairs.iter().map(|(r, rel)| f(r, rel)).sum::<f64>() / n;
        let mut s = RankingSummary {
            queries: pairs.len(),
            mrr: 100.0 * mrr(&ranks).expect("non-empty, positive ranks"),
            ..Default::default()
        };
        for &k in ks.iter().filter(|&&k| k > 0) {
            s.hit.insert(k, mean(&|r, rel| hit_at_k(r, rel, k).expect("k > 0")));
            s.recall.insert(k, mean(&|r, rel| recall_at_k(r, rel, k).expect("k > 0, relevant")));
            s.ndcg.insert(k, mean(&|r, rel| ndcg_at_k(r, rel, k).expect("k > 0, relevant")));
        }
        Some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub records: usize,
    pub failures: usize,
    pub overall_rule: OverallRule,
    pub overall: f64,
    pub numeric_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num: Option<f64>,
    pub text_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub records: Vec<EvalRecord>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(records: &[EvalRecord], options: &EvalOptions) -> EvalSummary {
    let num: Vec<f64> = records.iter().filter(|r| r.route == ScoreRoute::Numeric).map(|r| r.score).collect();
    let text: Vec<f64> = records.iter().filter(|r| r.route == ScoreRoute::Text).map(|r| r.score).collect();
    let all: Vec<f64> = records.iter().map(|r| r.score).collect();
    let num_pct = mean(&num).map(|m| 100.0 * m);
    let f1_pct = mean(&text).map(|m| 100.0 * m);
    let overall = match options.overall {
        OverallRule::RecordMean => 100.0 * mean(&all).unwrap_or(0.0),
        OverallRule::RouteMean => mean(&[num_pct, f1_pct].into_iter().flatten().collect::<Vec<_>>()).unwrap_or(0.0),
    };
    let pairs: Vec<(Vec<u32>, BTreeSet<u32>)> = records
        .iter()
        .filter_map(|r| match (&r.page_ranking, &r.gold_pages) {
            (Some(rank), Some(gold)) => Some((rank.clone(), gold.iter().copied().collect())),
            _ => None,
        })
        .collect();
    EvalSummary {
        records: records.len(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        overall_rule: options.overall,
        overall,
        numeric_records: num.len(),
        num: num_pct,
        text_records: text.len(),
        f1: f1_pct,
        ranking: RankingSummary::compute(&pairs, &options.ks),
    }
}

/// Runs `system` on every row (in parallel when `options.threads > 1`) and
/// scores the results. Failed rows score 0 and the run continues.
pub fn run_eval<F>(rows: &[DatasetRow], system: F, options: &EvalOptions) -> Result<EvalReport, EvalError>
where
    F: Fn(&DatasetRow) -> Result<SystemOutput, String> + Sync,
{
    if rows.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let records: Vec<EvalRecord> = if options.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(std::io::Error::other)?;
        pool.install(|| rows.par_iter().map(|r| evaluate_row(r, &system, options.rel_tol)).collect())
    } else {
        rows.iter().map(|r| evaluate_row(r, &system, options.rel_tol)).collect()
    };
    Ok(EvalReport {
        summary: summarize(&records, options),
        records,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

impl EvalReport {
    pub fn table(&self) -> String {
        let s = &self.summary;
        let mut out = format!(
            "records   {}\nfailures  {}\n\n{:<10}{:>8}\n{:<10}{:>8}\n{:<10}{:>8}  ({} records)\n{:<10}{:>8}  ({} records)\n",
            s.records,
            s.failures,
            "metric",
            "score",
            "Overall",
            format!("{:.1}", s.overall),
            "Num",
            fmt_opt(s.num),
            s.numeric_records,
            "F1",
            fmt_opt(s.f1),
            s.text_records
        );
        if let Some(r) = &s.ranking {
            out.push_str(&format!("\nranking over {} queries\n", r.queries));
            out.push_str(&ranking_line("MRR", r.mrr, None));
            for (k, v) in &r.hit {
                out.push_str(&ranking_line("Hit", *v, Some(*k)));
            }
            for (k, v) in &r.recall {
                out.push_str(&ranking_line("Recall", *v, Some(*k)));
            }
            for (k, v) in &r.ndcg {
                out.push_str(&ranking_line("nDCG", *v, Some(*k)));
            }
        }
        out
    }
}

fn ranking_line(name: &str, v: f64, k: Option<usize>) -> String {
    let label = match k {
        Some(k) => format!("{name}@{k}"),
        None => name.to_string(),
    };
    format!("{label:<10}{v:>8.1}\n")
}

/// Writes the report as JSON at `path` and as a text table next to it (`.txt`).
pub fn write_report<T: Serialize>(value: &T, table: &str, path: &Path) -> std::io::Result<()> {
    write_json_atomic(path, value)?;
    write_atomic(&path.with_extension("txt"), table.as_bytes())
}

/// One retriever / index-mode / subquery setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSetting {
    pub retriever: Retriever,
    pub mode: IndexMode,
    pub subqueries: bool,
}

impl RankSetting {
    /// The full retriever × mode × subquery grid.
    pub fn grid(retrievers: &[Retriever]) -> Vec<RankSetting> {
        let mut out = Vec::new();
        for &retriever in retrievers {
            for mode in [IndexMode::Ocr, IndexMode::Knowledge] {
                for subqueries in [false, true] {
                    out.push(RankSetting {
                        retriever,
                        mode,
                        subqueries,
                    });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.retriever.name(),
            match self.mode {
                IndexMode::Ocr => "ocr",
                IndexMode::Knowledge => "knowledge",
            },
            if self.subqueries { "subq" } else { "q" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCell {
    pub setting: RankSetting,
    pub summary: Option<RankingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rows: usize,
    /// Rows without gold pages or whose document is unknown.
    pub skipped: usize,
    pub cells: Vec<RankCell>,
}

impl RankReport {
    pub fn cell(&self, setting: RankSetting) -> Option<&RankingSummary> {
        self.cells.iter().find(|c| c.setting == setting).and_then(|c| c.summary.as_ref())
    }

    pub fn table(&self, ks: &[usize]) -> String {
        let mut out = format!("{:<24}{:>8}", "setting", "MRR");
        for k in ks {
            out.push_str(&format!("{:>9}{:>9}{:>9}", format!("Hit@{k}"), format!("R@{k}"), format!("nDCG@{k}")));
        }
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!("{:<24}", c.setting.label()));
            match &c.summary {
                Some(s) => {
                    out.push_str(&format!("{:>8.1}", s.mrr));
                    for k in ks {
                        for m in [&s.hit, &s.recall, &s.ndcg] {
                            out.push_str(&format!("{:>9}", fmt_opt(m.get(k).copied())));
                        }
                    }
                }
                None => out.push_str(&format!("{:>8}", "-")),
            }
            out.push('\n');
        }
        out.push_str(&format!("\n{} rows, {} skipped\n", self.rows, self.skipped));
        out
    }
}

/// A document and its knowledge base, as used by [`rank_eval`].
pub struct Corpus<'a> {
    pub doc: &'a Document,
    pub kb: Option<&'a KnowledgeBase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOptions {
    pub ks: Vec<usize>,
    pub subquery_cap: usize,
    pub bm25: Bm25Params,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 3, 5],
            subquery_cap: DEFAULT_SUBQUERY_CAP,
            bm25: Bm25Params::default(),
        }
    }
}

/// Page-retrieval metrics for every setting. Each row's full page ranking is
/// scored against its gold pages; subqueries are generated once per row.
pub fn rank_eval(
    rows: &[DatasetRow],
    corpora: &HashMap<String, Corpus<'_>>,
    backend: &dyn Backend,
    settings: &[RankSetting],
    options: &RankOptions,
) -> Result<RankReport, EvalError> {
    let ks = &options.ks[..];
    if rows.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let usable: Vec<&DatasetRow> = rows
        .iter()
        .filter(|r| {
            let ok = r.gt_pages.as_ref().is_some_and(|g| !g.is_empty()) && corpora.contains_key(&r.doc_id);
            if !ok {
                log::warn!("rank-eval skips {:?}: no gold pages or unknown document {:?}", r.question, r.doc_id);
            }
            ok
        })
        .collect();
    let log = PromptLog::new();
    let subqueries: Vec<Vec<String>> = if settings.iter().any(|s| s.subqueries) {
        usable
            .iter()
            .map(|r| generate_subqueries(&r.question, backend, &log, options.subquery_cap))
            .collect()
    } else {
        vec![Vec::new(); usable.len()]
    };
    let mut cache = EmbeddingCache::in_memory();
    let mut indexes: HashMap<(String, Retriever, IndexMode), PageIndex> = HashMap::new();
    let mut cells = Vec::new();
    for &setting in settings {
        let mut pairs = Vec::new();
        for (row, subs) in usable.iter().zip(&subqueries) {
            let key = (row.doc_id.clone(), setting.retriever, setting.mode);
            if !indexes.contains_key(&key) {
                let c = &corpora[&row.doc_id];
                let mut idx = index_pages(c.kb, c.doc, setting.mode, setting.retriever, Some(backend), &mut cache)?;
                idx.index.set_bm25(options.bm25);
                indexes.insert(key.clone(), idx);
            }
            let idx = &indexes[&key];
            let plan = QueryPlan::new(
                row.question.clone(),
                QueryCase::Uncertain,
                if setting.subqueries { subs.clone() } else { Vec::new() },
            );
            let ranking: Vec<u32> = retrieve_pages(&plan, idx, idx.pages.len().max(1), Some(backend))?
                .into_iter()
                .map(|r| r.page_index)
                .collect();
            let gold: BTreeSet<u32> = row.gt_pages.iter().flatten().copied().collect();
            pairs.push((ranking, gold));
        }
        cells.push(RankCell {
            setting,
            summary: RankingSummary::compute(&pairs, ks),
        });
    }
    Ok(RankReport {
        rows: rows.len(),
        skipped: rows.len() - usable.len(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(answer: &str) -> DatasetRow {
        DatasetRow {
            doc_id: "d".into(),
            question: format!("q {answer}"),
            answer: answer.into(),
            gt_pages: None,
        }
    }

    #[test]
    fn mixed_fixture_aggregates() {
        let rows = vec![row("17k"), row("3"), row("97%"), row("2.5 million"), row("red car"), row("big blue sky")];
        let preds: HashMap<&str, &str> = [
            ("17k", "about 17,000"),
            ("3", "three"),
            ("97%", "0.5"),
            ("2.5 million", "none"),
            ("red car", "red car"),
            ("big blue sky", "blue"),
        ]
        .into_iter()
        .collect();
        let report = run_eval(
            &rows,
            |r| {
                Ok(SystemOutput {
                    prediction: preds[r.answer.as_str()].to_string(),
                    page_ranking: None,
                })
            },
            &EvalOptions::default(),
        )
        .unwrap();
        let s = &report.summary;
        assert_eq!(s.num, Some(50.0));
        assert_eq!(s.f1, Some(75.0));
        assert!((s.overall - 100.0 * 3.5 / 6.0).abs() < 1e-9);
        assert!(report.table().contains("Overall"));
    }

    #[test]
    fn failures_score_zero_and_continue() {
        let rows = vec![row("a"), row("b")];
        let report = run_eval(
            &rows,
            |r| if r.answer == "a" { Err("boom".into()) } else { Ok(SystemOutput { prediction: "b".into(), page_ranking: None }) },
            &EvalOptions { threads: 2, ..Default::default() },
        )
        .unwrap();
        assert_eq!(report.summary.failures, 1);
        assert_eq!(report.summary.overall, 50.0);
        assert_eq!(report.records[0].error.as_deref(), Some("boom"));
    }

    #[test]
    fn dataset_parsing() {
        let rows = parse_dataset("{\"doc_id\":\"d\",\"question\":\"q\",\"answer\":\"a\",\"gt_pages\":[2]}\n\n").unwrap();
        assert_eq!(rows[0].gt_pages, Some(vec![2]));
        assert!(matches!(parse_dataset(""), Err(EvalError::EmptyDataset)));
        assert!(matches!(parse_dataset("{}"), Err(EvalError::Dataset { line: 1, .. })));
    }
}
