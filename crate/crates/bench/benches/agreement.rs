use criterion::{black_box, criterion_group, criterion_main, Criterion};
use deckagent_bench::answer_pairs;
use deckagent_core::nls;
use deckagent_core::orchestrator::texts_agree;

fn agreement(c: &mut Criterion) {
    let pairs = answer_pairs(1000, 3);
    c.bench_function("nls_1000_pairs", |b| {
        b.iter(|| pairs.iter().map(|(x, y)| nls(black_box(x), black_box(y))).sum::<f64>())
    });
    let three = ["Business under-performance", "business under performance", "Business underperformance."];
    c.bench_function("texts_agree_3", |b| b.iter(|| texts_agree(black_box(&three))));
}

criterion_group!(benches, agreement);
criterion_main!(benches);
