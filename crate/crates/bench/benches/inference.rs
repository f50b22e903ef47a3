use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sgground_bench::{chain, clique};
use sgground_core::inference::{map_inference_bp, map_inference_exact};
use sgground_core::BpParams;

fn inference(c: &mut Criterion) {
    let mut g = c.benchmark_group("map");
    for (name, fg) in [("chain4x8", chain(1, 4, 8)), ("clique3x8", clique(1, 3, 8)), ("clique4x16", clique(1, 4, 16))] {
        g.bench_with_input(BenchmarkId::new("bp", name), &fg, |b, fg| {
            b.iter(|| map_inference_bp(fg, &BpParams::default()))
        });
        g.bench_with_input(BenchmarkId::new("exact", name), &fg, |b, fg| {
            b.iter(|| map_inference_exact(fg).unwrap())
        });
    }
    // only BP is practical here
    let big = chain(2, 12, 50);
    g.bench_function("bp/chain12x50", |b| b.iter(|| map_inference_bp(&big, &BpParams::default())));
    g.finish();
}

criterion_group!(benches, inference);
criterion_main!(benches);
