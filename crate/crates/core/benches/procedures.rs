//! Parallel against sequential scheduling of the two procedures.
//!
//! The sequential arm passes `parallel = false`, which is also what a build
//! without the `parallel` feature runs, so both arms produce identical
//! effects and only the wall time differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand_distr::{Distribution, StandardNormal};
use shapley_core::oracle::random_spd_covariance;
use shapley_core::procedure::{run_random_permutation_procedure, run_subset_procedure};
use shapley_core::rng::{stream, Domain};
use shapley_core::{
    DataSample, EstimatorKind, ExactBackend, GivenDataBackend, InputModel, LinearGaussianModel,
    Variant,
};

fn fixture(p: usize) -> LinearGaussianModel {
    let gamma = random_spd_covariance(p, &mut stream(2024, Domain::Sample, p as u64, 0));
    LinearGaussianModel::new(vec![1.0; p], vec![0.0; p], gamma).expect("valid fixture")
}

fn sample(model: &LinearGaussianModel, n: usize) -> DataSample {
    let p = model.p();
    let mut rng = stream(7, Domain::Sample, 0, 0);
    let chol = model.gamma().clone().cholesky().expect("positive definite");
    let l = chol.l();
    let mut rows = Vec::with_capacity(n * p);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..p).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect();
        ys.push(model.evaluate(&x).expect("linear model"));
        rows.extend(x);
    }
    DataSample::continuous(p, rows).unwrap().with_outputs(ys).unwrap()
}

fn exact_mode(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact");
    group.sample_size(10);
    for p in [6, 10] {
        let m = fixture(p);
        let backend = ExactBackend::double_mc(&m, &m, m.known_moments().unwrap()).unwrap();
        let ntot = 54_000;
        for (name, parallel) in [("parallel", true), ("sequential", false)] {
            group.bench_with_input(BenchmarkId::new(format!("subset/{name}"), p), &p, |b, _| {
                b.iter(|| black_box(run_subset_procedure(&backend, ntot, 1, parallel).unwrap()))
            });
            let perms = ntot / (3 * (p as u64 - 1));
            group.bench_with_input(BenchmarkId::new(format!("random-perm/{name}"), p), &p, |b, _| {
                b.iter(|| {
                    black_box(run_random_permutation_procedure(&backend, perms, 1, 1, parallel).unwrap())
                })
            });
        }
    }
    group.finish();
}

fn given_data(c: &mut Criterion) {
    let mut group = c.benchmark_group("given-data");
    group.sample_size(10);
    let m = fixture(6);
    let s = sample(&m, 5000);
    for (name, parallel) in [("parallel", true), ("sequential", false)] {
        group.bench_function(format!("subset-knn/{name}"), |b| {
            b.iter(|| {
                // A fresh backend each time so index construction is measured.
                let backend =
                    GivenDataBackend::new(&s, None, EstimatorKind::DoubleMc, Variant::Knn, 3).unwrap();
                black_box(run_subset_procedure(&backend, 20_000, 1, parallel).unwrap())
            })
        });
    }
    group.finish();
}

/// The default rayon pool against a single-thread pool, same code path.
#[cfg(feature = "parallel")]
fn pool_width(c: &mut Criterion) {
    let mut group = c.benchmark_group("pool");
    group.sample_size(10);
    let m = fixture(8);
    let backend = ExactBackend::pick_freeze(&m, &m, m.known_moments().unwrap()).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    group.bench_function("default", |b| {
        b.iter(|| black_box(run_subset_procedure(&backend, 40_000, 3, true).unwrap()))
    });
    group.bench_function("one-thread", |b| {
        b.iter(|| single.install(|| black_box(run_subset_procedure(&backend, 40_000, 3, true).unwrap())))
    });
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn pool_width(_: &mut Criterion) {}

criterion_group!(benches, exact_mode, given_data, pool_width);
criterion_main!(benches);
