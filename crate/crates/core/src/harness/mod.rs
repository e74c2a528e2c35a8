//! The full test procedure and the experiment runner.
//!
//! [`run_test`] splits the data in two halves: q is chosen and the weight
//! model trained on the first, and the weighted statistic with its
//! permutation null is computed on the second.

pub mod experiment;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use experiment::{
    config_hash, run_experiment, run_experiment_with, CellResult, ExperimentConfig, ExperimentResult,
    write_experiment, Method, ReplicateRecord,
};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{gram_with, KernelSpec};
use crate::q_marginal::{optimal_cq_multivariate, optimal_cq_univariate, sample_q, CovBlocks, QMode, QSpec};
use crate::ratio::{
    predict_weights, train_categorical, train_mixed, product_count, train_nce_q, train_tre_q, BridgeSchedule, PairSet,
    RatioModel, ScorerSpec, TrainReport,
};
use crate::rng::{child_rng, derive_seed, streams};
use crate::simgen::{ColumnKind, Dataset};
use crate::statistic::{permutation_test, StatisticInputs, TestResult, DEFAULT_N_Q};
use crate::stats::correlation;

/// Smallest dataset `run_test` accepts.
pub const MIN_ROWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Generator-known weights; needs a dataset that carries them.
    TrueWeights,
    Categorical,
    #[serde(rename = "nceq")]
    #[value(name = "nceq")]
    NceQ,
    #[serde(rename = "treq")]
    #[value(name = "treq")]
    TreQ,
    #[serde(rename = "mixed")]
    #[value(name = "mixed")]
    MixedProduct,
    #[serde(rename = "uniform")]
    #[value(name = "uniform")]
    UniformBaseline,
    /// All weights 1.
    #[serde(rename = "unit")]
    #[value(name = "unit")]
    UnitWeights,
}

/// How q is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum QPolicy {
    /// Optimal scaling for continuous X (fitted on the training half),
    /// `q = p` otherwise.
    #[default]
    Auto,
    Fixed { mode: QMode },
}

/// Where the q actually used came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QSource {
    Univariate,
    Multivariate,
    /// The optimal scaling was undefined on this data; `q = p` was used.
    Fallback,
    /// Categorical or mixed treatments use `q = p`.
    Empirical,
    Fixed,
    /// The generator's own q, paired with its true weights.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub kernel_x: KernelSpec,
    pub kernel_y: KernelSpec,
    pub estimator: EstimatorKind,
    pub q: QPolicy,
    pub n_q: usize,
    /// Every random choice of a test derives from this seed; the scorer's
    /// own `seed` field is replaced.
    pub seed: u64,
    pub scorer: ScorerSpec,
    /// Bridges for TRE-q, and for the continuous factor of mixed models
    /// when `mixed_tre` is set.
    pub schedule: BridgeSchedule,
    pub mixed_tre: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            kernel_x: KernelSpec::rbf_median(),
            kernel_y: KernelSpec::rbf_median(),
            estimator: EstimatorKind::NceQ,
            q: QPolicy::Auto,
            n_q: DEFAULT_N_Q,
            seed: 0,
            scorer: ScorerSpec::default(),
            schedule: BridgeSchedule::default(),
            mixed_tre: false,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_q == 0 {
            return Err(Error::param("n_q must be ≥ 1"));
        }
        if let QPolicy::Fixed { mode } = self.q {
            QSpec { mode, seed: 0 }.validate()?;
        }
        self.scorer.validate()
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub converged: bool,
}

impl From<&TrainReport> for TrainSummary {
    fn from(r: &TrainReport) -> Self {
        Self {
            epochs: r.epochs,
            best_epoch: r.best_epoch,
            best_validation_loss: r.best_validation_loss,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub estimator: EstimatorKind,
    pub q_mode: QMode,
    pub q_source: QSource,
    pub sigma_x: Option<f64>,
    pub sigma_y: Option<f64>,
    pub n_train: usize,
    pub weight_mean: f64,
    /// Predicted weights that hit the clamp.
    pub clamped: usize,
    pub training: Vec<TrainSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub result: TestResult,
    pub diagnostics: Diagnostics,
}

/// First `⌈n/2⌉` rows and the rest.
pub fn split_halves(data: &Dataset) -> (Dataset, Dataset) {
    let n = data.n();
    let cut = n.div_ceil(2);
    let first: Vec<usize> = (0..cut).collect();
    let second: Vec<usize> = (cut..n).collect();
    (data.subset(&first), data.subset(&second))
}

/// Resolve the q policy on the training half.
pub fn resolve_q(train: &Dataset, config: &TestConfig) -> (QMode, QSource) {
    if config.estimator == EstimatorKind::TrueWeights {
        return (QMode::Resample, QSource::Generator);
    }
    if let QPolicy::Fixed { mode } = config.q {
        return (mode, QSource::Fixed);
    }
    let continuous = train.x_kinds.iter().all(|k| *k == ColumnKind::Continuous);
    let categorical_model = matches!(
        config.estimator,
        EstimatorKind::Categorical | EstimatorKind::MixedProduct
    );
    if !continuous || categorical_model {
        return (QMode::Resample, QSource::Empirical);
    }
    let fitted = if train.x.ncols() == 1 && train.z.ncols() == 1 {
        let rho = correlation(&train.x.column(0).to_vec(), &train.z.column(0).to_vec());
        optimal_cq_univariate(rho).map(|c| (c, QSource::Univariate))
    } else {
        CovBlocks::estimate(train.x.view(), train.z.view())
            .and_then(|b| optimal_cq_multivariate(&b))
            .map(|c| (c, QSource::Multivariate))
    };
    match fitted {
        Ok((c, source)) => (QMode::Scale { c }, source),
        Err(e) => {
            log::warn!("optimal q scaling unavailable ({e}); using q = p");
            (QMode::Resample, QSource::Fallback)
        }
    }
}

/// q-samples for the rows of `x`. Scaling is applied about the column
/// means, so `q` keeps the location of `p`.
pub fn draw_q(x: ArrayView2<f64>, mode: QMode, seed: u64) -> Result<Array2<f64>> {
    let spec = QSpec { mode, seed };
    match mode {
        QMode::Scale { .. } => {
            let mean = x.mean_axis(Axis(0)).ok_or(Error::Empty("X for q-sampling"))?;
            let centered = &x - &mean;
            Ok(sample_q(centered.view(), &spec)? + &mean)
        }
        _ => sample_q(x, &spec),
    }
}

/// `count` q-samples for the rows of `x`: successive independent draws of
/// [`draw_q`], truncated. Draw `k > 0` uses seed `derive_seed(seed, k)`.
pub fn draw_q_rows(x: ArrayView2<f64>, mode: QMode, seed: u64, count: usize) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("X for q-sampling"));
    }
    let mut draws = Vec::with_capacity(count.div_ceil(n));
    for k in 0..count.div_ceil(n) {
        let s = if k == 0 { seed } else { derive_seed(seed, k as u64) };
        draws.push(draw_q(x, mode, s)?);
    }
    let views: Vec<_> = draws.iter().map(|d| d.view()).collect();
    let all = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::dims(e.to_string()))?;
    Ok(all.slice(ndarray::s![..count, ..]).to_owned())
}

fn check_inputs(data: &Dataset, config: &TestConfig) -> Result<()> {
    config.validate()?;
    data.validate()?;
    if data.n() < MIN_ROWS {
        return Err(Error::Data(format!(
            "need at least {MIN_ROWS} rows, got {}",
            data.n()
        )));
    }
    Ok(())
}

fn scorer_spec(config: &TestConfig) -> ScorerSpec {
    ScorerSpec {
        seed: derive_seed(config.seed, streams::ESTIMATOR),
        ..config.scorer.clone()
    }
}

/// Train the configured weight model on the training half.
fn train_model(
    train: &Dataset,
    config: &TestConfig,
    q_mode: QMode,
) -> Result<(RatioModel, Vec<TrainReport>)> {
    let spec = scorer_spec(config);
    let q_seed = derive_seed(config.seed, streams::Q_SAMPLE_TRAIN);
    let estimator_failure = |e: Error| match e {
        Error::InvalidParameter(_) | Error::Estimator(_) => e,
        other => Error::Estimator(other.to_string()),
    };
    match config.estimator {
        EstimatorKind::Categorical => {
            let (m, r) = train_categorical(train.x.view(), train.z.view(), &spec)
                .map_err(estimator_failure)?;
            Ok((RatioModel::from_categorical(m), r))
        }
        EstimatorKind::NceQ | EstimatorKind::TreQ => {
            let count = product_count(train.n(), spec.nu);
            let xq = draw_q_rows(train.x.view(), q_mode, q_seed, count)?;
            let joint = PairSet::new(train.x.clone(), train.z.clone())?;
            let product = PairSet::product(xq, train.z.view())?;
            if config.estimator == EstimatorKind::NceQ {
                let (m, r) = train_nce_q(&joint, &product, &spec).map_err(estimator_failure)?;
                Ok((RatioModel::NceQ(m), vec![r]))
            } else {
                let (m, r) = train_tre_q(&joint, &product, &config.schedule, &spec)
                    .map_err(estimator_failure)?;
                Ok((RatioModel::TreQ(m), r))
            }
        }
        EstimatorKind::MixedProduct => {
            let cat = train_columns(train, ColumnKind::Categorical);
            let cont = train_columns(train, ColumnKind::Continuous);
            if cat.is_empty() || cont.is_empty() {
                return Err(Error::param(
                    "mixed estimator needs both categorical and continuous X columns",
                ));
            }
            let x_cat = train.x.select(Axis(1), &cat);
            let x_cont = train.x.select(Axis(1), &cont);
            let count = product_count(train.n(), spec.nu);
            let xq_cont = draw_q_rows(x_cont.view(), QMode::Resample, q_seed, count)?;
            let schedule = config.mixed_tre.then_some(&config.schedule);
            let (model, r) = train_mixed(
                x_cat.view(),
                x_cont.view(),
                train.z.view(),
                xq_cont.view(),
                &spec,
                schedule,
            )
            .map_err(estimator_failure)?;
            Ok((
                RatioModel::MixedProduct {
                    cat_columns: cat,
                    cont_columns: cont,
                    model,
                },
                r,
            ))
        }
        EstimatorKind::UniformBaseline => Ok((
            RatioModel::UniformBaseline {
                seed: derive_seed(config.seed, streams::ESTIMATOR),
            },
            vec![],
        )),
        EstimatorKind::UnitWeights => Ok((RatioModel::Unit, vec![])),
        EstimatorKind::TrueWeights => Err(Error::param("true weights are not trained")),
    }
}

fn train_columns(d: &Dataset, kind: ColumnKind) -> Vec<usize> {
    match kind {
        ColumnKind::Categorical => d.categorical_columns(),
        ColumnKind::Continuous => d.continuous_columns(),
    }
}

/// Gram matrices on the test half and the permutation test.
fn weighted_test(
    x: ArrayView2<f64>,
    xq: ArrayView2<f64>,
    y: ArrayView2<f64>,
    w: &[f64],
    config: &TestConfig,
    exec: Exec,
) -> Result<(TestResult, Option<f64>, Option<f64>)> {
    let kx = config.kernel_x.resolve(x)?;
    let ky = config.kernel_y.resolve(y)?;
    let k = gram_with(x, x, &kx, exec)?;
    let kq = gram_with(x, xq, &kx, exec)?;
    let kqq = gram_with(xq, xq, &kx, exec)?;
    let l = gram_with(y, y, &ky, exec)?;
    let inputs = StatisticInputs {
        k: k.view(),
        l: l.view(),
        kq: kq.view(),
        kqq: kqq.view(),
        w,
    };
    let result = permutation_test(&inputs, config.n_q, config.seed, exec)?;
    Ok((result, kx.sigma(), ky.sigma()))
}

/// The full test with the default execution strategy.
pub fn run_test(data: &Dataset, config: &TestConfig) -> Result<TestReport> {
    run_test_with(data, config, None, Exec::default()).map(|(r, _)| r)
}

/// The full test. A `preloaded` model replaces training; the model used
/// (if any) is returned alongside the report.
pub fn run_test_with(
    data: &Dataset,
    config: &TestConfig,
    preloaded: Option<&RatioModel>,
    exec: Exec,
) -> Result<(TestReport, Option<RatioModel>)> {
    check_inputs(data, config)?;
    let (train, test) = split_halves(data);
    let (q_mode, q_source) = resolve_q(&train, config);
    let test_q_seed = derive_seed(config.seed, streams::Q_SAMPLE_TEST);

    let (weights, xq, model, reports, clamped) = if config.estimator == EstimatorKind::TrueWeights {
        let w = test
            .true_weights
            .clone()
            .ok_or_else(|| Error::Data("dataset has no true weights".into()))?;
        let q = test
            .true_q
            .as_ref()
            .ok_or_else(|| Error::Data("dataset does not describe its true q".into()))?;
        if q.dim() != test.x.ncols() {
            return Err(Error::Data("true q dimension differs from X".into()));
        }
        let xq = q.sample(test.n(), &mut child_rng(test_q_seed, 0));
        (w, xq, None, vec![], 0)
    } else {
        let (model, reports) = match preloaded {
            Some(m) => (m.clone(), vec![]),
            None => train_model(&train, config, q_mode)?,
        };
        let pred = predict_weights(&model, test.x.view(), test.z.view())?;
        let xq = draw_q(test.x.view(), q_mode, test_q_seed)?;
        (pred.weights.into_vec(), xq, Some(model), reports, pred.clamped)
    };

    let (result, sigma_x, sigma_y) =
        weighted_test(test.x.view(), xq.view(), test.y.view(), &weights, config, exec)?;
    let diagnostics = Diagnostics {
        estimator: config.estimator,
        q_mode,
        q_source,
        sigma_x,
        sigma_y,
        n_train: train.n(),
        weight_mean: weights.iter().sum::<f64>() / weights.len() as f64,
        clamped,
        training: reports.iter().map(TrainSummary::from).collect(),
    };
    Ok((TestReport { result, diagnostics }, model))
}

/// Plain HSIC permutation test of X against Y on the test half, ignoring Z.
pub fn marginal_hsic_test(data: &Dataset, config: &TestConfig) -> Result<TestReport> {
    marginal_hsic_test_with(data, config, Exec::default())
}

pub fn marginal_hsic_test_with(data: &Dataset, config: &TestConfig, exec: Exec) -> Result<TestReport> {
    check_inputs(data, config)?;
    let (train, test) = split_halves(data);
    let w = vec![1.0; test.n()];
    let (result, sigma_x, sigma_y) =
        weighted_test(test.x.view(), test.x.view(), test.y.view(), &w, config, exec)?;
    Ok(TestReport {
        result,
        diagnostics: Diagnostics {
            estimator: EstimatorKind::UnitWeights,
            q_mode: QMode::Identity,
            q_source: QSource::Fixed,
            sigma_x,
            sigma_y,
            n_train: train.n(),
            weight_mean: 1.0,
            clamped: 0,
            training: vec![],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{gen_binary, gen_continuous, GenParams};

    fn small_config(estimator: EstimatorKind) -> TestConfig {
        TestConfig {
            estimator,
            n_q: 50,
            seed: 3,
            scorer: ScorerSpec {
                max_epochs: 5,
                ..ScorerSpec::default()
            },
            ..TestConfig::default()
        }
    }

    fn data(n: usize) -> Dataset {
        gen_continuous(&GenParams {
            n,
            seed: 1,
            ..GenParams::default()
        })
        .unwrap()
    }

    #[test]
    fn odd_split_gives_first_half_the_extra_row() {
        let (a, b) = split_halves(&data(21));
        assert_eq!((a.n(), b.n()), (11, 10));
    }

    #[test]
    fn deterministic() {
        let d = data(200);
        for e in [
            EstimatorKind::TrueWeights,
            EstimatorKind::NceQ,
            EstimatorKind::TreQ,
            EstimatorKind::UniformBaseline,
        ] {
            let c = small_config(e);
            let a = run_test(&d, &c).unwrap();
            let b = run_test(&d, &c).unwrap();
            assert_eq!(a, b, "{e:?}");
            assert!((0.0..=1.0).contains(&a.result.p_value));
            assert_eq!(a.result.n_test, 100);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let d = data(120);
        let c = small_config(EstimatorKind::NceQ);
        let a = run_test_with(&d, &c, None, Exec::Sequential).unwrap();
        let b = run_test_with(&d, &c, None, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_weights_with_identity_q_is_marginal_hsic() {
        let d = data(150);
        let c = TestConfig {
            q: QPolicy::Fixed { mode: QMode::Identity },
            ..small_config(EstimatorKind::UnitWeights)
        };
        let a = run_test(&d, &c).unwrap();
        let b = marginal_hsic_test(&d, &c).unwrap();
        assert!((a.result.statistic - b.result.statistic).abs() <= 1e-10);
    }

    #[test]
    fn q_policy_resolution() {
        let d = data(400);
        let (train, _) = split_halves(&d);
        let (m, s) = resolve_q(&train, &small_config(EstimatorKind::NceQ));
        assert_eq!(s, QSource::Univariate);
        assert!(matches!(m, QMode::Scale { c } if c > 0.0 && c < 1.0));
        let b = gen_binary(&GenParams {
            n: 100,
            ..GenParams::default()
        })
        .unwrap();
        let (m, s) = resolve_q(&b, &small_config(EstimatorKind::Categorical));
        assert_eq!((m, s), (QMode::Resample, QSource::Empirical));
    }

    #[test]
    fn strong_correlation_falls_back() {
        let n = 100;
        let z = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 + (i % 3) as f64);
        let d = Dataset::observed(x, z.clone(), z).unwrap();
        let (m, s) = resolve_q(&d, &small_config(EstimatorKind::NceQ));
        assert_eq!((m, s), (QMode::Resample, QSource::Fallback));
    }

    #[test]
    fn scaled_q_keeps_location() {
        let x = Array2::from_shape_fn((2000, 1), |(i, _)| 10.0 + (i % 7) as f64);
        let q = draw_q(x.view(), QMode::Scale { c: 0.5 }, 1).unwrap();
        let m = q.column(0).mean().unwrap();
        assert!((m - 13.0).abs() < 0.1, "{m}");
    }

    #[test]
    fn errors_are_classified() {
        let c = small_config(EstimatorKind::TrueWeights);
        assert!(matches!(run_test(&data(10), &c), Err(Error::Data(_))));
        let mut d = data(100);
        d.true_weights = None;
        assert!(matches!(run_test(&d, &c), Err(Error::Data(_))));
        let bad = TestConfig { n_q: 0, ..c };
        assert!(matches!(run_test(&data(100), &bad), Err(Error::InvalidParameter(_))));
        let mixed = small_config(EstimatorKind::MixedProduct);
        assert!(matches!(run_test(&data(100), &mixed), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn preloaded_model_skips_training() {
        let d = data(200);
        let c = small_config(EstimatorKind::NceQ);
        let (a, model) = run_test_with(&d, &c, None, Exec::default()).unwrap();
        let (b, _) = run_test_with(&d, &c, model.as_ref(), Exec::default()).unwrap();
        assert_eq!(a.result, b.result);
        assert!(b.diagnostics.training.is_empty());
    }
}
