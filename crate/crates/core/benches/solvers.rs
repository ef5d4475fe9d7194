//! Sequential versus rayon paths, toggled at runtime through `par::set_enabled`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otwb::instances::gen_random_instance;
use otwb::kernels::{self, ScaledPlan, TransportPlan};
use otwb::matrix::Matrix;
use otwb::ot::{self, OtOptions, Variant};
use otwb::par;

const PATHS: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn random_grad(n: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0))
}

fn prox_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("prox");
    for n in [100, 400] {
        let grad = random_grad(n, 1);
        let xbar = TransportPlan::uniform(n);
        let sbar = ScaledPlan::uniform(n, 0.01).unwrap();
        for (label, on) in PATHS {
            par::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(format!("entropy/{label}"), n), &n, |b, _| {
                b.iter(|| kernels::entropy_prox_regularized(&xbar, &grad, 0.5, 0.1).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("scaled/{label}"), n), &n, |b, _| {
                b.iter(|| kernels::scaled_prox(&sbar, &grad, 0.5).unwrap())
            });
        }
    }
    group.finish();
    par::set_enabled(true);
}

fn full_solves(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    // A fixed iteration budget keeps the work identical across paths.
    let opts = OtOptions {
        fixed_marginal: true,
        max_iter: 50,
        ..OtOptions::default()
    };
    for n in [100, 400] {
        let inst = gen_random_instance(n, 1).unwrap();
        for (label, on) in PATHS {
            par::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                b.iter(|| ot::solve_eps(&inst, 1e-9, Variant::Regularized, &opts).unwrap())
            });
        }
    }
    group.finish();
    par::set_enabled(true);
}

criterion_group!(benches, prox_steps, full_solves);
criterion_main!(benches);
