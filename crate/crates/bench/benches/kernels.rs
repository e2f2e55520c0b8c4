use criterion::{criterion_group, criterion_main, Criterion};
use embcomp::budget::{solve, Method, SolverConfig};
use embcomp::posttrain::truncated_svd;
use embcomp_bench::{default_space, random_matrix, DIM};
use rand::Rng;

fn auc(c: &mut Criterion) {
    let mut rng = embcomp::rng::seeded(4, 0);
    let scores: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..100_000).map(|_| rng.random_bool(0.3)).collect();
    c.bench_function("auc_100k", |b| b.iter(|| embcomp::auc(&scores, &labels).unwrap()));
}

fn solver(c: &mut Criterion) {
    let space = default_space();
    let cfg = SolverConfig::default();
    c.bench_function("solve_all_training", |b| {
        b.iter(|| {
            for method in Method::TRAINING {
                for beta in [0.5, 0.1, 0.01, 0.001] {
                    solve(method, beta, &space, DIM, &cfg).unwrap();
                }
            }
        })
    });
}

fn svd(c: &mut Criterion) {
    let m = random_matrix(2000, 64, 5).cast::<f64>();
    let mut group = c.benchmark_group("truncated_svd");
    group.sample_size(10);
    group.bench_function("2000x64_rank16", |b| b.iter(|| truncated_svd(&m, 16)));
    group.finish();
}

criterion_group!(benches, auc, solver, svd);
criterion_main!(benches);
