use deckagent_core::eval::numeric_match;
use deckagent_core::orchestrator::texts_agree;
use deckagent_core::retrieval::{tokenize, EmbeddingCache, PageIndex};
use deckagent_core::{
    bm25_score, merge_elements, min_box_distance, nls, normalize_number, token_f1, BoundingBox, CorpusStats, Element,
    ElementType, IndexMode, QueryCase, QueryPlan, Retriever,
};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["revenue", "cost", "chart", "growth", "asia", "q3", "the", "margin", "users"])
        .prop_map(String::from)
}

fn doc_text() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..12).prop_map(|w| w.join(" "))
}

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0u32..300, 0u32..200, 1u32..60, 1u32..30).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn bm25_grows_with_term_frequency(docs in prop::collection::vec(doc_text(), 3..6), extra in 1usize..4) {
        let mut tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
        // a term that appears in exactly one document has positive IDF once N ≥ 3
        tokenized[0].push("zebra".into());
        let stats = CorpusStats::from_docs(&tokenized);
        let q = vec!["zebra".to_string()];
        let base = bm25_score(&q, &tokenized[0], &stats);
        let mut more = tokenized[0].clone();
        more.extend(std::iter::repeat_n("zebra".to_string(), extra));
        prop_assert!(base > 0.0);
        prop_assert!(bm25_score(&q, &more, &stats) > base);
    }

    #[test]
    fn bm25_is_non_negative(docs in prop::collection::vec(doc_text(), 1..6), q in doc_text()) {
        let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
        let stats = CorpusStats::from_docs(&tokenized);
        for d in &tokenized {
            prop_assert!(bm25_score(&tokenize(&q), d, &stats) >= 0.0);
        }
    }

    #[test]
    fn page_ranking_ignores_insertion_order(docs in prop::collection::vec(doc_text(), 1..8), q in doc_text(), seed in any::<u64>()) {
        let units: Vec<(u32, String)> = docs.iter().enumerate().map(|(i, d)| (i as u32 + 1, d.clone())).collect();
        let mut shuffled = units.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize ^ i.wrapping_mul(2654435761)) % (i + 1));
        }
        let build = |u: Vec<(u32, String)>| {
            PageIndex::from_units("d", IndexMode::Ocr, u, Retriever::Bm25, None, &mut EmbeddingCache::in_memory()).unwrap()
        };
        let plan = QueryPlan::new(format!("{q} chart"), QueryCase::FactDirect, vec![]);
        let a = deckagent_core::retrieval::retrieve_pages(&plan, &build(units), n, None).unwrap();
        let b = deckagent_core::retrieval::retrieve_pages(&plan, &build(shuffled), n, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn agreement_ignores_order(texts in prop::collection::vec("[a-c ]{0,6}", 1..5)) {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut rev = refs.clone();
        rev.reverse();
        prop_assert_eq!(texts_agree(&refs), texts_agree(&rev));
    }

    #[test]
    fn nls_is_bounded_and_reflexive(a in ".{0,20}", b in ".{0,20}") {
        let s = nls(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(nls(&a, &a), 1.0);
    }

    #[test]
    fn f1_is_symmetric(a in "[a-z -]{0,30}", b in "[a-z -]{0,30}") {
        prop_assert!((token_f1(&a, &b) - token_f1(&b, &a)).abs() < 1e-12);
        let s = token_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn normalization_is_idempotent(v in -1_000_000_000i64..1_000_000_000, scale in 0u32..4) {
        let text = decimal_text(v, scale);
        let first = normalize_number(&text).unwrap();
        let again = normalize_number(&first.canonical()).unwrap();
        prop_assert_eq!(first.value, again.value);
        prop_assert!(numeric_match(&text, &first.canonical(), 0.0));
    }

    #[test]
    fn min_distance_is_symmetric_and_zero_on_overlap(a in bbox(), b in bbox()) {
        let d = min_box_distance(&a, &b);
        prop_assert_eq!(d, min_box_distance(&b, &a));
        prop_assert!(d >= 0.0);
        let overlap = a.x1 <= b.x2 && b.x1 <= a.x2 && a.y1 <= b.y2 && b.y1 <= a.y2;
        prop_assert_eq!(d == 0.0, overlap);
    }

    #[test]
    fn merging_never_loses_words(boxes in prop::collection::vec(bbox(), 0..25), tau in 0.0f64..40.0) {
        let elements: Vec<Element> = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Element::new(format!("e{i}"), 1, ElementType::Text, *b, format!("w{i}")))
            .collect();
        let merged = merge_elements(&elements, tau).unwrap();
        prop_assert!(merged.len() <= elements.len());
        let mut words: Vec<String> = merged.iter().flat_map(|e| e.verbatim.split(' ').map(String::from)).collect();
        words.sort();
        let mut want: Vec<String> = elements.iter().map(|e| e.verbatim.clone()).collect();
        want.sort();
        prop_assert_eq!(words, want);
    }
}

fn decimal_text(v: i64, scale: u32) -> String {
    let d = 10i64.pow(scale);
    let (whole, frac) = (v / d, (v % d).abs());
    let sign = if v < 0 && whole == 0 { "-" } else { "" };
    if scale == 0 {
        format!("{v}")
    } else {
        format!("{sign}{whole}.{frac:0width$}", width = scale as usize)
    }
}
