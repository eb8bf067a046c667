use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use splitmerge_bench::{split_case, SIZES};
use splitmerge_core::timing::{is_baseline, kor_decode, kor_split};

fn split(c: &mut Criterion) {
    let mut g = c.benchmark_group("split");
    g.sample_size(10);
    for size in SIZES {
        let w = split_case(size).expect("workload");
        g.bench_with_input(BenchmarkId::new("keypoint", size), &w, |b, w| {
            b.iter(|| kor_split(black_box(w)).unwrap())
        });
        g.bench_with_input(
            BenchmarkId::new("keypoint_decode_only", size),
            &w,
            |b, w| b.iter(|| kor_decode(black_box(w)).unwrap()),
        );
        g.bench_with_input(BenchmarkId::new("mask_baseline", size), &w, |b, w| {
            b.iter(|| is_baseline(black_box(w)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, split);
criterion_main!(benches);
