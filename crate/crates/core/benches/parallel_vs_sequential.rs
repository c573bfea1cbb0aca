use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use odyn::analysis::bifurcation_sweep_with;
use odyn::exec::Exec;
use odyn::fixtures::{random_row_stochastic, rng};
use odyn::spectral::KroneckerOperator;
use odyn::train::{finite_difference_grad, random_fixture, TrainConfig};
use odyn::Matrix;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("bifurcation_sweep");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 400), |b| {
            b.iter(|| bifurcation_sweep_with(exec, 0.05, 0.6, black_box(400), 1.0, 1.0, 0.0).unwrap())
        });
    }
    g.finish();
}

fn fd_grad(c: &mut Criterion) {
    let (x_in, w, target, aa, ao) = random_fixture(40, 16, 4, &mut rng(11));
    let cfg = TrainConfig::new(1.0, 1.0);
    let mut g = c.benchmark_group("finite_difference_grad");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| finite_difference_grad(exec, &x_in, black_box(&w), &target, &aa, &ao, &cfg, 1e-5).unwrap())
        });
    }
    g.finish();
}

fn kron_apply(c: &mut Criterion) {
    let mut r = rng(12);
    let op = KroneckerOperator::new(&random_row_stochastic(400, &mut r), &random_row_stochastic(8, &mut r)).unwrap();
    let x = Matrix::random_uniform(1, op.dim(), -1.0, 1.0, &mut r).into_values();
    let mut g = c.benchmark_group("kronecker_apply");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, op.dim()), |b| b.iter(|| op.apply_with(exec, black_box(&x)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, sweep, fd_grad, kron_apply);
criterion_main!(benches);
