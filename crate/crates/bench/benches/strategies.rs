use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedweight_bench::context;
use fedweight_core::Strategy;
use std::hint::black_box;

fn coefficients(c: &mut Criterion) {
    let strategies: Vec<Strategy> = [
        "fedavg",
        "fedworse",
        "fedbetter_k(k=0.2)",
        "fedsoftworse(T=0.2)",
        "fedsoftbetter(T=0.2)",
        "fedsoftbetteravg(switch=20)",
    ]
    .iter()
    .map(|s| s.parse().expect("strategy"))
    .collect();
    let mut group = c.benchmark_group("coefficients");
    for n in [10, 100, 1000] {
        let ctx = context(n);
        for s in &strategies {
            group.bench_with_input(BenchmarkId::new(s.to_string(), n), &ctx, |b, ctx| {
                b.iter(|| s.coefficients(black_box(ctx)).expect("coefficients"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, coefficients);
criterion_main!(benches);
