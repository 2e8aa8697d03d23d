use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use deckagent_bench::random_page;
use deckagent_core::{merge_elements, min_box_distance, DEFAULT_TAU};

fn distance(c: &mut Criterion) {
    let page = random_page(2, 1);
    c.bench_function("min_box_distance", |b| {
        b.iter(|| min_box_distance(black_box(&page[0].bbox), black_box(&page[1].bbox)))
    });
}

fn merge(c: &mut Criterion) {
    let mut group = c.benchmark_group("merge_elements");
    for n in [10, 50, 200] {
        let page = random_page(n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &page, |b, page| {
            b.iter(|| merge_elements(black_box(page), DEFAULT_TAU).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, distance, merge);
criterion_main!(benches);
