use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spectraloss_bench::{field_pair, spectral, transform};
use std::hint::black_box;

fn transforms(c: &mut Criterion) {
    let mut group = c.benchmark_group("transform");
    for k in [21, 42, 85] {
        let t = transform(k);
        let (x, _) = field_pair(&t, 1);
        let s = spectral(k, 2);
        group.bench_with_input(BenchmarkId::new("analyze", k), &x, |b, x| b.iter(|| t.analyze(black_box(x)).unwrap()));
        group.bench_with_input(BenchmarkId::new("synthesize", k), &s, |b, s| {
            b.iter(|| t.synthesize(black_box(s)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, transforms);
criterion_main!(benches);
