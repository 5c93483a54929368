use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use epmine::linalg::{cosine_similarity_matrix_seq, l2_normalize_rows, EmbeddingMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_embedding(b: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    l2_normalize_rows(&Matrix {
        rows: b,
        cols: d,
        data,
    })
    .unwrap()
}

fn bench_similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("cosine_similarity_matrix");
    for &b in &[128usize, 512, 1024] {
        let e = random_embedding(b, 64, 7);
        group.bench_with_input(BenchmarkId::new("seq", b), &e, |bench, e| {
            bench.iter(|| black_box(cosine_similarity_matrix_seq(black_box(e))))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", b), &e, |bench, e| {
            bench.iter(|| {
                black_box(epmine::linalg::cosine_similarity_matrix_par(black_box(e)))
            })
        });
    }
    group.finish();
}

fn bench_recall(c: &mut Criterion) {
    let mut group = c.benchmark_group("recall_at_k");
    for &b in &[256usize, 1024] {
        let e = random_embedding(b, 64, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u32> = (0..b).map(|_| rng.random_range(0..32)).collect();
        let cfg = epmine::eval::RetrievalConfig::default();
        group.bench_function(BenchmarkId::from_parameter(b), |bench| {
            bench.iter(|| {
                black_box(
                    epmine::eval::recall_at_k(
                        black_box(&e),
                        &labels,
                        black_box(&e),
                        &labels,
                        &cfg,
                    )
                    .unwrap(),
                )
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_similarity, bench_recall);
criterion_main!(benches);
