use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::Rng;

use bdhsic::kernels::{gram_with, KernelSpec};
use bdhsic::rng::rng_from;
use bdhsic::statistic::{permutation_null_with, StatisticInputs};
use bdhsic::Exec;

fn points(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng_from(seed);
    Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0))
}

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn bench_gram(c: &mut Criterion) {
    let mut g = c.benchmark_group("gram");
    let spec = KernelSpec::rbf(1.0);
    for n in [500, 2000] {
        let a = points(n, 3, 1);
        for (name, exec) in modes() {
            g.bench_with_input(BenchmarkId::new(name, n), &a, |b, a| {
                b.iter(|| gram_with(a.view(), a.view(), &spec, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn bench_permutation_null(c: &mut Criterion) {
    let mut g = c.benchmark_group("permutation_null");
    g.sample_size(10);
    let spec = KernelSpec::rbf(1.0);
    for n in [250, 1000] {
        let x = points(n, 1, 2);
        let xq = points(n, 1, 3);
        let y = points(n, 1, 4);
        let k = gram_with(x.view(), x.view(), &spec, Exec::Sequential).unwrap();
        let kq = gram_with(x.view(), xq.view(), &spec, Exec::Sequential).unwrap();
        let kqq = gram_with(xq.view(), xq.view(), &spec, Exec::Sequential).unwrap();
        let l = gram_with(y.view(), y.view(), &spec, Exec::Sequential).unwrap();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64 * 0.25).collect();
        let inputs = StatisticInputs {
            k: k.view(),
            l: l.view(),
            kq: kq.view(),
            kqq: kqq.view(),
            w: &w,
        };
        for (name, exec) in modes() {
            g.bench_with_input(BenchmarkId::new(name, n), &inputs, |b, inputs| {
                b.iter(|| permutation_null_with(inputs, 100, 7, exec).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench_gram, bench_permutation_null);
criterion_main!(benches);
