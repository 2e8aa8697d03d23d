//! Answer and ranking metrics.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::LazyLock;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no rankings to average")]
    NoRankings,
    #[error("rank positions start at 1")]
    ZeroRank,
    #[error("k ≥ 1 required")]
    ZeroK,
    #[error("relevant set is empty")]
    NoRelevant,
}

static STOPWORDS: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| include_str!("stopwords.txt").lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect());

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(word)
}

/// Lowercases, replaces punctuation with spaces (a hyphen between two
/// alphanumerics is kept), splits on whitespace and drops stopwords.
pub fn answer_tokens(text: &str) -> Vec<String> {
    let lower: Vec<char> = text.to_lowercase().chars().collect();
    let cleaned: String = lower
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let kept_hyphen = c == '-'
                && i > 0
                && lower[i - 1].is_alphanumeric()
                && lower.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            if c.is_alphanumeric() || c.is_whitespace() || kept_hyphen {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !is_stopword(w))
        .map(str::to_string)
        .collect()
}

/// F1 over the token multisets of [`answer_tokens`]. Two empty token lists score 1.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = answer_tokens(pred);
    let g = answer_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1-based position of the first relevant item.
pub fn first_relevant<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>) -> Option<usize> {
    ranking.iter().position(|x| relevant.contains(x)).map(|p| p + 1)
}

/// Mean reciprocal rank; `None` ranks contribute 0.
pub fn mrr(ranks: &[Option<usize>]) -> Result<f64, MetricError> {
    if ranks.is_empty() {
        return Err(MetricError::NoRankings);
    }
    let mut sum = 0.0;
    for r in ranks {
        match r {
            Some(0) => return Err(MetricError::ZeroRank),
            Some(r) => sum += 1.0 / *r as f64,
            None => {}
        }
    }
    Ok(sum / ranks.len() as f64)
}

/// 1 if a relevant item is in the top `k`, else 0.
pub fn hit_at_k<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(if ranking.iter().take(k).any(|x| relevant.contains(x)) { 1.0 } else { 0.0 })
}

pub fn recall_at_k<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if relevant.is_empty() {
        return Err(MetricError::NoRelevant);
    }
    let found: BTreeSet<&T> = ranking.iter().take(k).filter(|x| relevant.contains(x)).collect();
    Ok(found.len() as f64 / relevant.len() as f64)
}

/// Binary-relevance nDCG with gain `1 / log2(position + 1)`.
pub fn ndcg_at_k<T: Ord>(ranking: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if relevant.is_empty() {
        return Err(MetricError::NoRelevant);
    }
    let gain = |pos: usize| 1.0 / ((pos + 1) as f64).log2();
    let mut seen = BTreeSet::new();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, x)| relevant.contains(*x) && seen.insert(*x))
        .map(|(i, _)| gain(i + 1))
        .sum();
    let ideal: f64 = (1..=relevant.len().min(k)).map(gain).sum();
    Ok(dcg / ideal)
}
