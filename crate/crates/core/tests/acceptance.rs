//! Acceptance suite. Each test prints one `PASS`/`FAIL` line.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use bdhsic::harness::{
    draw_q_rows, run_experiment, split_halves, EstimatorKind, ExperimentConfig, Method, QPolicy,
    TestConfig,
};
use bdhsic::kernels::{gram, median_heuristic, KernelSpec};
use bdhsic::q_marginal::{optimal_cq_multivariate, optimal_cq_univariate, CovBlocks, QMode};
use bdhsic::ratio::{default_gradient_checks, product_count, train_nce_q, PairSet, ScorerSpec};
use bdhsic::simgen::{generate, Dependence, GenParams, Generator, Sampler};
use bdhsic::stats::ols_slope;
use bdhsic::statistic::{bd_hsic_statistic, permuted_statistic, StatisticInputs};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    use std::io::Write as _;
    let tag = if pass { "PASS" } else { "FAIL" };
    // written to the raw handle so the line shows without --nocapture
    let _ = writeln!(std::io::stderr().lock(), "{tag} criterion {id:>2} ({name}): {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = normal_matrix(n, n, rng);
    (&a + &a.t()) * 0.5
}

fn rejection_rate(config: &ExperimentConfig) -> (f64, bdhsic::harness::CellResult) {
    let result = run_experiment(config).expect("experiment runs");
    let cell = result.cells[0].clone();
    assert_eq!(cell.completed, config.replicates, "every replicate completes");
    (cell.rejection_rate, cell)
}

fn continuous_base(n: usize, beta_xy: f64) -> GenParams {
    GenParams {
        n,
        beta_xy,
        beta_xz: 0.75,
        beta_yz: vec![0.5, 0.0],
        theta: 2.0,
        phi: 2.0,
        ..GenParams::default()
    }
}

fn true_weight_test() -> TestConfig {
    TestConfig {
        estimator: EstimatorKind::TrueWeights,
        ..TestConfig::default()
    }
}

#[test]
fn c01_statistic_reduces_to_biased_hsic() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let dx = rng.random_range(1..=3);
        let dy = rng.random_range(1..=3);
        let x = normal_matrix(n, dx, &mut rng);
        let y = normal_matrix(n, dy, &mut rng);
        let k = gram(x.view(), x.view(), &KernelSpec::rbf(rng.random_range(0.3..3.0))).unwrap();
        let l = gram(y.view(), y.view(), &KernelSpec::rbf(rng.random_range(0.3..3.0))).unwrap();
        let w = vec![1.0; n];
        let stat = bd_hsic_statistic(&StatisticInputs {
            k: k.view(),
            l: l.view(),
            kq: k.view(),
            kqq: k.view(),
            w: &w,
        })
        .unwrap();
        // tr(KHLH) / n²
        let h = Array2::<f64>::eye(n) - Array2::<f64>::from_elem((n, n), 1.0 / n as f64);
        let khlh = k.view().dot(&h).dot(&l.view()).dot(&h);
        let oracle = khlh.diag().sum() / (n * n) as f64;
        worst = worst.max((stat - oracle).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        1,
        "statistic reduction",
        worst <= 1e-10 && secs < 10.0,
        format!("max |error| {worst:.2e}, {secs:.2}s"),
    );
}

#[test]
fn c02_matrix_form_matches_naive_sum() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let k = random_symmetric(n, &mut rng);
        let l = random_symmetric(n, &mut rng);
        let kq = normal_matrix(n, m, &mut rng);
        let kqq = random_symmetric(m, &mut rng);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let inputs = StatisticInputs {
            k: k.view(),
            l: l.view(),
            kq: kq.view(),
            kqq: kqq.view(),
            w: &w,
        };
        let naive = |lp: &dyn Fn(usize, usize) -> f64| {
            let (nf, mf) = (n as f64, m as f64);
            let mut a = 0.0;
            let mut b = 0.0;
            let mut c = 0.0;
            for i in 0..n {
                for j in 0..n {
                    a += w[i] * w[j] * k[[i, j]] * lp(i, j);
                    for p in 0..m {
                        for q in 0..m {
                            b += kqq[[p, q]] * w[i] * w[j] * lp(i, j);
                        }
                        c += w[i] * kq[[i, p]] * lp(i, j) * w[j];
                    }
                }
            }
            a / (nf * nf) + b / (mf * mf * nf * nf) - 2.0 * c / (nf * nf * mf)
        };
        let direct = bd_hsic_statistic(&inputs).unwrap();
        let permuted = permuted_statistic(&inputs, &perm).unwrap();
        let e1 = (direct - naive(&|i, j| l[[i, j]])).abs();
        let e2 = (permuted - naive(&|i, j| l[[perm[i], perm[j]]])).abs();
        worst = worst.max(e1).max(e2);
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        2,
        "brute-force oracle",
        worst <= 1e-10 && secs < 5.0,
        format!("max |error| {worst:.2e}, {secs:.2}s"),
    );
}

#[test]
fn c03_true_weights_calibrated() {
    let t0 = Instant::now();
    let config = ExperimentConfig {
        generator: Generator::Continuous,
        base: continuous_base(1000, 0.0),
        test: true_weight_test(),
        replicates: 200,
        seed: 3,
        ..ExperimentConfig::default()
    };
    let (rate, cell) = rejection_rate(&config);
    let ks_p = cell.ks_p_value.expect("null cell reports KS");
    let secs = t0.elapsed().as_secs_f64();
    report(
        3,
        "true-weight calibration",
        (0.02..=0.10).contains(&rate) && ks_p > 0.01 && secs < 900.0,
        format!("rejection {rate:.3}, KS p {ks_p:.3}, {secs:.0}s"),
    );
}

/// Power of the heteroskedasticity-robust weighted least-squares z-test of
/// `Y ~ g(X)` on the test half with true weights, rejecting at `|z| > crit`.
fn wls_oracle_power(config: &ExperimentConfig, g: impl Fn(f64) -> f64, crit: f64) -> f64 {
    let mut rejections = 0;
    for r in 0..config.replicates {
        let p = GenParams {
            seed: config.replicate_seed(r),
            ..config.base.clone()
        };
        let data = generate(config.generator, &p).unwrap();
        let (_, test) = split_halves(&data);
        let w = test.true_weights.as_ref().unwrap();
        let x: Vec<f64> = test.x.column(0).iter().map(|&v| g(v)).collect();
        let y = test.y.column(0).to_vec();
        let sw: f64 = w.iter().sum();
        let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
        let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
        let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
        let slope = sxy / sxx;
        let meat: f64 = x
            .iter()
            .zip(&y)
            .zip(w)
            .map(|((a, c), b)| (b * (a - mx) * (c - my - slope * (a - mx))).powi(2))
            .sum();
        if (slope * sxx / meat.sqrt()).abs() > crit {
            rejections += 1;
        }
    }
    rejections as f64 / config.replicates as f64
}

/// Power threshold for criterion 4, set once from the oracle (0.8 × 0.24).
const POWER_THRESHOLD: f64 = 0.19;

#[test]
fn c04_true_weight_power() {
    let t0 = Instant::now();
    let config = ExperimentConfig {
        generator: Generator::Continuous,
        base: continuous_base(5000, 0.02),
        test: TestConfig {
            kernel_x: KernelSpec::linear(),
            kernel_y: KernelSpec::linear(),
            ..true_weight_test()
        },
        replicates: 100,
        seed: 4,
        ..ExperimentConfig::default()
    };
    let oracle = wls_oracle_power(&config, |x| x, 1.959_964);
    // the two-sided permutation p-value rejects large statistics at α/2
    let matched = wls_oracle_power(&config, |x| x, 2.241_403);
    let (rate, cell) = rejection_rate(&config);
    let secs = t0.elapsed().as_secs_f64();
    report(
        4,
        "true-weight power",
        rate >= POWER_THRESHOLD,
        format!(
            "rejection {rate:.3} (threshold {POWER_THRESHOLD}; WLS oracle {oracle:.3}, {matched:.3} at the \
             statistic's upper-tail level), mean ESS {:.0}, {secs:.0}s",
            cell.mean_ess
        ),
    );
}

/// Smallest β on a 0.01 grid where the quadratic WLS oracle reaches 0.9.
const QUADRATIC_BETA: f64 = 0.04;

#[test]
fn c05_kernel_choice_for_nonlinear_dependence() {
    let t0 = Instant::now();
    let base = GenParams {
        dependence: Dependence::Quadratic,
        ..continuous_base(5000, QUADRATIC_BETA)
    };
    let config = |kernel: KernelSpec| ExperimentConfig {
        generator: Generator::Continuous,
        base: base.clone(),
        test: TestConfig {
            kernel_x: kernel,
            kernel_y: kernel,
            ..true_weight_test()
        },
        replicates: 100,
        seed: 5,
        ..ExperimentConfig::default()
    };
    let (rbf, _) = rejection_rate(&config(KernelSpec::rbf_median()));
    let (linear, _) = rejection_rate(&config(KernelSpec::linear()));
    let secs = t0.elapsed().as_secs_f64();
    report(
        5,
        "non-linear power",
        rbf >= 0.7 && linear <= 0.5 * rbf,
        format!("β = {QUADRATIC_BETA}: RBF rejection {rbf:.3}, linear {linear:.3}, {secs:.0}s"),
    );
}

/// Scorer used for the NCE-q accuracy and calibration checks.
fn nce_scorer() -> ScorerSpec {
    ScorerSpec {
        batch_size: 64,
        patience: 30,
        max_epochs: 500,
        nu: NCE_NU,
        ..ScorerSpec::default()
    }
}

const NCE_NU: f64 = 10.0;

/// Standard bivariate normal `(x, z)` with correlation `rho`.
fn gaussian_pairs(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let z = normal_matrix(n, 1, rng);
    let e = normal_matrix(n, 1, rng);
    let x = &z * rho + e * (1.0 - rho * rho).sqrt();
    (x, z)
}

#[test]
fn c06_nce_q_accuracy_and_calibration() {
    let t0 = Instant::now();
    let rho: f64 = 0.5;
    let n = 8000;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (x, z) = gaussian_pairs(n, rho, &mut rng);
    let spec = ScorerSpec {
        seed: 61,
        ..nce_scorer()
    };
    let xq = draw_q_rows(x.view(), QMode::Resample, 62, product_count(n, spec.nu)).unwrap();
    let joint = PairSet::new(x, z.clone()).unwrap();
    let product = PairSet::product(xq, z.view()).unwrap();
    let (model, _) = train_nce_q(&joint, &product, &spec).unwrap();
    let (xf, zf) = gaussian_pairs(n, rho, &mut rng);
    let predicted = model.log_weights(xf.view(), zf.view()).unwrap();
    let s2 = 1.0 - rho * rho;
    let mse = predicted
        .iter()
        .zip(xf.column(0).iter().zip(zf.column(0).iter()))
        .map(|(lw, (&x, &z))| {
            let exact = -0.5 * x * x + 0.5 * (x - rho * z).powi(2) / s2 + 0.5 * s2.ln();
            (lw - exact).powi(2)
        })
        .sum::<f64>()
        / n as f64;

    // X | Z ~ N(βZ, φ) with β² / (β² + φ) = ρ²
    let beta_xz = (2.0 * rho * rho / (1.0 - rho * rho)).sqrt();
    let config = ExperimentConfig {
        generator: Generator::Continuous,
        base: GenParams {
            beta_xz,
            ..continuous_base(1000, 0.0)
        },
        test: TestConfig {
            estimator: EstimatorKind::NceQ,
            q: QPolicy::Fixed { mode: QMode::Resample },
            scorer: nce_scorer(),
            ..TestConfig::default()
        },
        replicates: 100,
        seed: 6,
        ..ExperimentConfig::default()
    };
    let (rate, _) = rejection_rate(&config);
    let secs = t0.elapsed().as_secs_f64();
    report(
        6,
        "NCE-q accuracy",
        mse <= 0.05 && rate <= 0.12,
        format!("log-weight MSE {mse:.4} at n = {n}, H₀ rejection {rate:.3} at n = 1000, {secs:.0}s"),
    );
}

/// `φ` for criterion 7: the x̄ confounding share ρ² = 3s²/(3s² + φ) is 1/3,
/// where the true weights have finite variance.
const FAILURE_PHI: f64 = 40.5;

#[test]
fn c07_confounding_failure_mode() {
    let t0 = Instant::now();
    let config = |estimator: EstimatorKind| ExperimentConfig {
        generator: Generator::Continuous,
        base: GenParams {
            d_x: 3,
            d_y: 3,
            d_z: 3,
            beta_xz: 1.5,
            phi: FAILURE_PHI,
            sampler: Sampler::Direct,
            ..continuous_base(1000, 0.0)
        },
        test: TestConfig {
            estimator,
            ..TestConfig::default()
        },
        replicates: 100,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let (nce, _) = rejection_rate(&config(EstimatorKind::NceQ));
    let (truth, _) = rejection_rate(&config(EstimatorKind::TrueWeights));
    let secs = t0.elapsed().as_secs_f64();
    report(
        7,
        "confounding failure mode",
        nce > 0.12 && truth <= 0.12,
        format!("H₀ rejection at β_XZ = 1.5: NCE-q {nce:.3}, true weights {truth:.3}, {secs:.0}s"),
    );
}

#[test]
fn c08_cq_oracle() {
    // E[w²] for q = N(0, c²), X | Z ~ N(ρZ, 1 − ρ²), by Monte Carlo with
    // common draws; expected ESS is n / E[w²].
    let draws = 400_000;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let u: Vec<(f64, f64)> = (0..draws)
        .map(|_| (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 0.005).collect();
    let mut worst_mc: f64 = 0.0;
    let mut worst_opt: f64 = 0.0;
    let mut details = Vec::new();
    for rho in [0.0, 0.2, 0.4, 0.6] {
        let s2 = 1.0 - rho * rho;
        let second_moment = |c: f64| {
            u.iter()
                .map(|&(z, e)| {
                    let x = rho * z + s2.sqrt() * e;
                    let log_q = -0.5 * x * x / (c * c) - c.ln();
                    let log_p = -0.5 * e * e - 0.5 * s2.ln();
                    (2.0 * (log_q - log_p)).exp()
                })
                .sum::<f64>()
                / draws as f64
        };
        let (best, _) = grid
            .iter()
            .map(|&c| (c, second_moment(c)))
            .fold((f64::NAN, f64::INFINITY), |acc, (c, m)| if m < acc.1 { (c, m) } else { acc });
        let analytic = optimal_cq_univariate(rho).unwrap();
        let blocks = CovBlocks::new(nalgebra::DMatrix::from_element(1, 1, rho)).unwrap();
        let optimized = optimal_cq_multivariate(&blocks).unwrap();
        worst_mc = worst_mc.max((best - analytic).abs());
        worst_opt = worst_opt.max((optimized - analytic).abs());
        details.push(format!("ρ={rho}: {analytic:.3}/{best:.3}/{optimized:.4}"));
    }
    report(
        8,
        "c_q oracle",
        worst_mc <= 0.02 && worst_opt <= 1e-3,
        format!(
            "analytic/MC/optimizer {}; max MC gap {worst_mc:.3}, max optimizer gap {worst_opt:.1e}",
            details.join(", ")
        ),
    );
}

#[test]
fn c11_gradient_checks() {
    let checks = default_gradient_checks().unwrap();
    let worst = checks.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let names: Vec<String> = checks.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(
        11,
        "gradient check",
        worst <= 1e-4,
        format!("max relative error {worst:.2e} ({})", names.join(", ")),
    );
}

#[test]
fn c09_do_null_is_not_marginal_independence() {
    let t0 = Instant::now();
    let config = |method: Method| ExperimentConfig {
        generator: Generator::Exponential,
        base: GenParams {
            n: 5000,
            beta_xy: 0.0,
            beta_xz: 1.0,
            beta_yz: vec![0.5, 0.0],
            theta: 0.1,
            phi: 1.5,
            ..GenParams::default()
        },
        test: true_weight_test(),
        method,
        replicates: 100,
        seed: 9,
        ..ExperimentConfig::default()
    };
    let (marginal, _) = rejection_rate(&config(Method::MarginalHsic));
    let (bd, _) = rejection_rate(&config(Method::BdHsic));
    let secs = t0.elapsed().as_secs_f64();
    report(
        9,
        "do-null vs marginal independence",
        marginal >= 0.5 && bd <= 0.12,
        format!("marginal HSIC rejection {marginal:.3}, bd-HSIC {bd:.3}, {secs:.0}s"),
    );
}

#[test]
fn c10_statistic_decays_as_one_over_n() {
    let t0 = Instant::now();
    let sizes = [250usize, 500, 1000, 2000, 4000];
    let mut means = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let mut total = 0.0;
        for r in 0..200u64 {
            let p = GenParams {
                n,
                beta_xy: 0.0,
                beta_xz: 0.0,
                seed: 10_000 * i as u64 + r,
                ..GenParams::default()
            };
            let data = generate(Generator::Continuous, &p).unwrap();
            let q = data.true_q.as_ref().unwrap();
            let xq = q.sample(n, &mut bdhsic::rng::rng_from(p.seed ^ 0xa5a5));
            let kx = KernelSpec::rbf(median_heuristic(data.x.view()).unwrap());
            let ky = KernelSpec::rbf(median_heuristic(data.y.view()).unwrap());
            let k = gram(data.x.view(), data.x.view(), &kx).unwrap();
            let kq = gram(data.x.view(), xq.view(), &kx).unwrap();
            let kqq = gram(xq.view(), xq.view(), &kx).unwrap();
            let l = gram(data.y.view(), data.y.view(), &ky).unwrap();
            let w = data.true_weights.clone().unwrap();
            total += bd_hsic_statistic(&StatisticInputs {
                k: k.view(),
                l: l.view(),
                kq: kq.view(),
                kqq: kqq.view(),
                w: &w,
            })
            .unwrap();
        }
        means.push(total / 200.0);
    }
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let slope = ols_slope(&lx, &ly);
    let secs = t0.elapsed().as_secs_f64();
    report(
        10,
        "convergence rate",
        (-1.3..=-0.7).contains(&slope) && secs < 1200.0,
        format!(
            "log-log slope {slope:.3} (means {}), {secs:.0}s",
            means.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

fn bdhsic(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_bdhsic"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    assert!(status.success(), "bdhsic {args:?} failed");
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                tree_bytes(&p)
                    .into_iter()
                    .map(|(n, b)| (format!("{}/{n}", p.file_name().unwrap().to_string_lossy()), b))
                    .collect()
            } else {
                vec![(
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )]
            }
        })
        .collect();
    out.sort();
    out
}

fn cli_session(dir: &Path, threads: &str) {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let t = ["--threads", threads];
    let run = |args: &[&str]| {
        let mut all = t.to_vec();
        all.extend_from_slice(args);
        bdhsic(&all);
    };
    run(&["simulate", "--gen", "continuous", "--n", "300", "--beta-xy", "0.3", "--seed", "5", "--out", &p("cont.csv")]);
    run(&["simulate", "--gen", "binary", "--n", "300", "--seed", "6", "--out", &p("bin.csv")]);
    run(&["simulate", "--gen", "mixed", "--n", "300", "--d-x", "2", "--seed", "7", "--out", &p("mixed.csv")]);
    run(&["simulate", "--gen", "exponential", "--n", "300", "--seed", "8", "--out", &p("exp.csv")]);
    run(&["simulate", "--gen", "conditional", "--n", "300", "--beta-xz", "0", "--beta-yz=-0.5,4", "--seed", "9", "--out", &p("cond.csv")]);
    for est in ["true-weights", "nceq", "treq", "uniform", "unit"] {
        run(&["test", "--data", &p("cont.csv"), "--estimator", est, "--nq", "50", "--seed", "1", "--out", &p(&format!("cont_{est}.json"))]);
    }
    run(&["test", "--data", &p("bin.csv"), "--estimator", "categorical", "--nq", "50", "--seed", "2", "--save-model", &p("cat_model.json"), "--out", &p("bin_cat.json")]);
    run(&["test", "--data", &p("bin.csv"), "--load-model", &p("cat_model.json"), "--estimator", "categorical", "--nq", "50", "--seed", "2", "--out", &p("bin_cat_loaded.json")]);
    run(&["test", "--data", &p("mixed.csv"), "--estimator", "mixed", "--nq", "50", "--seed", "3", "--out", &p("mixed.json")]);
    run(&["test", "--data", &p("exp.csv"), "--marginal", "--nq", "50", "--seed", "4", "--out", &p("exp_marginal.json")]);
    run(&["test", "--data", &p("cond.csv"), "--kernel", "linear", "--estimator", "true-weights", "--nq", "50", "--seed", "4", "--out", &p("cond.json")]);
    let config = dir.join("experiment.json");
    std::fs::write(
        &config,
        r#"{"generator": "continuous", "base": {"n": 200}, "sweep": {"beta_xy": [0.0, 0.4]},
            "test": {"estimator": "nceq", "n_q": 50}, "replicates": 3, "seed": 11}"#,
    )
    .unwrap();
    run(&["experiment", "--config", &p("experiment.json"), "--out", &p("exp_out")]);
}

#[test]
fn c12_cli_determinism() {
    let runs: Vec<_> = ["1", "1", "2", "0"]
        .iter()
        .map(|threads| {
            let dir = tempfile::tempdir().unwrap();
            cli_session(dir.path(), threads);
            (threads.to_string(), tree_bytes(dir.path()))
        })
        .collect();
    let reference = &runs[0].1;
    let mismatches: Vec<String> = runs[1..]
        .iter()
        .flat_map(|(threads, files)| {
            assert_eq!(files.len(), reference.len(), "same file set");
            files
                .iter()
                .zip(reference)
                .filter(|(a, b)| a != b)
                .map(move |(a, _)| format!("{} (threads {threads})", a.0))
        })
        .collect();
    report(
        12,
        "determinism",
        mismatches.is_empty(),
        format!(
            "{} files compared across 2 runs and thread counts 1, 2, all; mismatches: {:?}",
            reference.len(),
            mismatches
        ),
    );
}
