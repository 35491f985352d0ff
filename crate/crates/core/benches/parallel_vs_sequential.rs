use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use psykit_core::autodiff::Tensor;
use psykit_core::corpus::{gen_synthetic, SyntheticConfig, TaskKind};
use psykit_core::features::fit_tfidf;
use psykit_core::models::{quantize_weights, RidgeRegressor};
use psykit_core::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn both<T>(c: &mut Criterion, group: &str, size: usize, f: impl Fn() -> T) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_with_input(BenchmarkId::new("parallel", size), &size, |b, _| b.iter(|| black_box(f())));
    g.bench_with_input(BenchmarkId::new("sequential", size), &size, |b, _| {
        b.iter(|| par::sequential(|| black_box(f())))
    });
    g.finish();
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    for n in [64, 256] {
        let a = random(&[n, n], 1);
        let b = random(&[n, n], 2);
        both(c, "matmul", n, || a.matmul(&b).unwrap());
    }
}

fn quantize(c: &mut Criterion) {
    let w = random(&[512, 512], 3);
    both(c, "quantize_4bit", 512 * 512, || quantize_weights(&w, 32).unwrap());
}

fn features_and_ridge(c: &mut Criterion) {
    let corpus = gen_synthetic(&SyntheticConfig::new(TaskKind::MultiOutputRegression, 4000, 800, 0.5, 5).with_targets(2)).unwrap();
    let texts: Vec<String> = corpus.records.iter().map(|r| r.text.clone()).collect();
    let y: Vec<f64> = corpus.records.iter().flat_map(|r| r.targets.clone()).collect();
    let tfidf = fit_tfidf(&texts, 5000, 2).unwrap();
    both(c, "tfidf_transform", texts.len(), || tfidf.transform_batch(&texts));
    let rows = tfidf.transform_batch(&texts);
    both(c, "ridge_fit", tfidf.dim(), || RidgeRegressor::fit(&rows, tfidf.dim(), &y, 2, 1.0).unwrap());
}

criterion_group!(benches, matmul, quantize, features_and_ridge);
criterion_main!(benches);
