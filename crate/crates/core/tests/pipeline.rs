//! Generators, estimators and the test procedure end to end.

use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use bdhsic::harness::{
    run_experiment, EstimatorKind, ExperimentConfig, Method, TestConfig,
};
use bdhsic::kernels::{gram, KernelSpec};
use bdhsic::ratio::{train_categorical, ScorerSpec};
use bdhsic::simgen::{generate, GenParams, Generator, TrueQ};
use bdhsic::statistic::{bd_hsic_statistic, p_value, permutation_null, StatisticInputs};
use bdhsic::stats::{ks_test, ks_uniform, mean, norm_cdf};

fn params(n: usize, seed: u64) -> GenParams {
    GenParams {
        n,
        seed,
        ..GenParams::default()
    }
}

fn conditional(n: usize, seed: u64) -> GenParams {
    GenParams {
        beta_xz: 0.0,
        beta_yz: vec![-0.5, 4.0],
        theta: 1.0,
        phi: 2.0,
        ..params(n, seed)
    }
}

#[test]
fn true_weights_average_one_for_every_generator() {
    let cases = [
        (Generator::Binary, params(20_000, 1)),
        (Generator::Continuous, params(20_000, 2)),
        (
            Generator::Continuous,
            GenParams {
                d_x: 3,
                d_y: 3,
                d_z: 3,
                beta_xz: 0.25,
                theta: 4.0,
                ..params(20_000, 3)
            },
        ),
        (Generator::Mixed, GenParams { d_x: 2, ..params(20_000, 4) }),
        (
            Generator::Exponential,
            GenParams {
                beta_xz: 1.0,
                theta: 0.1,
                phi: 1.5,
                ..params(20_000, 5)
            },
        ),
        (Generator::Conditional, conditional(20_000, 6)),
    ];
    for (kind, p) in cases {
        let data = generate(kind, &p).unwrap();
        let w = data.true_weights.as_ref().expect("generators know their weights");
        let m = mean(w);
        assert!((0.9..=1.1).contains(&m), "{kind:?}: mean weight {m}");
    }
}

#[test]
fn rejection_sampler_matches_target_marginal() {
    for seed in [11, 12, 13] {
        let data = generate(Generator::Continuous, &params(10_000, seed)).unwrap();
        let var = match data.true_q {
            Some(TrueQ::Gaussian { phi, s2, d: 1 }) => phi + s2,
            ref other => panic!("unexpected q {other:?}"),
        };
        let x = data.x.column(0).to_vec();
        let ks = ks_test(&x, |v| norm_cdf(v / var.sqrt())).unwrap();
        assert!(ks.p_value > 0.01, "seed {seed}: KS p {}", ks.p_value);
    }
}

#[test]
fn generators_are_reproducible() {
    for kind in [
        Generator::Binary,
        Generator::Continuous,
        Generator::Mixed,
        Generator::Exponential,
        Generator::Conditional,
    ] {
        let p = match kind {
            Generator::Mixed => GenParams { d_x: 2, ..params(300, 21) },
            Generator::Conditional => conditional(300, 21),
            _ => params(300, 21),
        };
        let a = generate(kind, &p).unwrap();
        let b = generate(kind, &p).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
        assert_eq!(a.true_weights, b.true_weights);
    }
}

#[test]
fn categorical_weights_average_one() {
    let data = generate(Generator::Binary, &params(4000, 31)).unwrap();
    let spec = ScorerSpec {
        seed: 31,
        ..ScorerSpec::default()
    };
    let (model, _) = train_categorical(data.x.view(), data.z.view(), &spec).unwrap();
    let w = model.ratios(data.x.view(), data.z.view()).unwrap();
    let m = mean(&w);
    assert!((0.8..=1.2).contains(&m), "mean weight {m}");
}

#[test]
fn permutation_p_values_are_uniform_under_exchangeable_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 40;
    let p_values: Vec<f64> = (0..500)
        .map(|rep| {
            let x = Array2::from_shape_fn((n, 1), |_| StandardNormal.sample(&mut rng));
            let y = Array2::from_shape_fn((n, 1), |_| StandardNormal.sample(&mut rng));
            let xq = Array2::from_shape_fn((n, 1), |_| StandardNormal.sample(&mut rng));
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
            let spec = KernelSpec::rbf(1.0);
            let k = gram(x.view(), x.view(), &spec).unwrap();
            let kq = gram(x.view(), xq.view(), &spec).unwrap();
            let kqq = gram(xq.view(), xq.view(), &spec).unwrap();
            let l = gram(y.view(), y.view(), &spec).unwrap();
            let inputs = StatisticInputs {
                k: k.view(),
                l: l.view(),
                kq: kq.view(),
                kqq: kqq.view(),
                w: &w,
            };
            let stat = bd_hsic_statistic(&inputs).unwrap();
            let null = permutation_null(&inputs, 199, rep).unwrap();
            p_value(stat, &null).unwrap()
        })
        .collect();
    let ks = ks_uniform(&p_values).unwrap();
    assert!(ks.p_value > 0.01, "KS p {}", ks.p_value);
}

fn experiment(generator: Generator, base: GenParams, test: TestConfig, method: Method) -> f64 {
    let config = ExperimentConfig {
        generator,
        base,
        test,
        method,
        replicates: 100,
        seed: 51,
        ..ExperimentConfig::default()
    };
    let result = run_experiment(&config).unwrap();
    let cell = &result.cells[0];
    assert_eq!(cell.completed, 100);
    cell.rejection_rate
}

#[test]
fn true_weights_calibrated_on_conditional_dependence_data() {
    let test = TestConfig {
        estimator: EstimatorKind::TrueWeights,
        n_q: 100,
        ..TestConfig::default()
    };
    let rate = experiment(Generator::Conditional, conditional(1000, 0), test, Method::BdHsic);
    assert!((0.01..=0.12).contains(&rate), "rejection {rate}");
}

#[test]
fn marginal_hsic_calibrated_without_dependence() {
    let base = GenParams {
        beta_xy: 0.0,
        beta_xz: 0.0,
        ..params(400, 0)
    };
    let test = TestConfig {
        n_q: 100,
        ..TestConfig::default()
    };
    let rate = experiment(Generator::Continuous, base, test, Method::MarginalHsic);
    assert!(rate <= 0.12, "rejection {rate}");
}
