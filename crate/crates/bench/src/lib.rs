//! Seeded input generators shared by the benches.

use deckagent_core::retrieval::tokenize;
use deckagent_core::{BoundingBox, Element, ElementType};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "revenue", "growth", "margin", "quarter", "customer", "churn", "pricing", "advisor", "asset", "region", "forecast",
    "cost", "chart", "segment", "retention", "pipeline", "market", "share", "target", "budget",
];

/// `n` elements on a 1280x720 page, about one in five non-text.
pub fn random_page(n: usize, seed: u64) -> Vec<Element> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x1 = rng.gen_range(0..1200);
            let y1 = rng.gen_range(0..680);
            let bbox = BoundingBox::new(x1, y1, x1 + rng.gen_range(10..80), y1 + rng.gen_range(8..40));
            let etype = if rng.gen_bool(0.8) { ElementType::Text } else { ElementType::Image };
            Element::new(format!("e{i}"), 1, etype, bbox, format!("w{i}"))
        })
        .collect()
}

pub fn random_text(words: usize, rng: &mut impl Rng) -> String {
    (0..words).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Tokenised documents of 20 to 200 words.
pub fn corpus(docs: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|_| {
            let n = rng.gen_range(20..200);
            tokenize(&random_text(n, &mut rng))
        })
        .collect()
}

/// Pairs of short answer strings.
pub fn answer_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = rng.gen_range(1..8);
            let b = rng.gen_range(1..8);
            (random_text(a, &mut rng), random_text(b, &mut rng))
        })
        .collect()
}
