//! Importance-weight estimation `w̃(x, z) ≈ q(x) / p(x | z)`.
//!
//! Learned models share one scorer architecture ([`ScorerSpec`]) and one
//! trainer with early stopping. Trained models serialize to JSON.

pub mod categorical;
pub mod mixed;
pub mod mlp;
pub mod nce;
pub mod train;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

pub use categorical::{train_categorical, CategoricalModel, FACTORIZE_FROM};
pub use mixed::{train_mixed, MixedModel};
pub use mlp::{Activation, Mlp, Targets};
pub use nce::{nce_pair_loss, product_count, train_nce_q, train_tre_q, BridgeSchedule, NceModel, PairSet, TreModel};
pub use train::{Optimizer, Scorer, ScorerSpec, TrainReport};

use crate::error::{Error, Result};
use crate::rng;
use crate::statistic::WeightVector;

/// Predicted weights are clamped into `[MIN_WEIGHT, MAX_WEIGHT]`.
pub const MIN_WEIGHT: f64 = 1e-6;
pub const MAX_WEIGHT: f64 = 1e6;

/// A trained weight model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RatioModel {
    Categorical(CategoricalModel),
    CategoricalFactorized(CategoricalModel),
    #[serde(rename = "NCEQ")]
    NceQ(NceModel),
    #[serde(rename = "TREQ")]
    TreQ(TreModel),
    MixedProduct {
        cat_columns: Vec<usize>,
        cont_columns: Vec<usize>,
        model: MixedModel,
    },
    /// Ignores its inputs and draws i.i.d. Uniform(0, 1) weights.
    UniformBaseline { seed: u64 },
    /// All weights 1.
    Unit,
}

/// Weights plus the number of entries that hit the clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub weights: WeightVector,
    pub clamped: usize,
}

impl RatioModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            RatioModel::Categorical(_) => "Categorical",
            RatioModel::CategoricalFactorized(_) => "CategoricalFactorized",
            RatioModel::NceQ(_) => "NCEQ",
            RatioModel::TreQ(_) => "TREQ",
            RatioModel::MixedProduct { .. } => "MixedProduct",
            RatioModel::UniformBaseline { .. } => "UniformBaseline",
            RatioModel::Unit => "Unit",
        }
    }

    pub fn from_categorical(m: CategoricalModel) -> Self {
        if m.factorized() {
            RatioModel::CategoricalFactorized(m)
        } else {
            RatioModel::Categorical(m)
        }
    }

    /// Weights before clamping.
    pub fn raw_weights(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.nrows() != z.nrows() {
            return Err(Error::dims("X and Z row counts differ"));
        }
        match self {
            RatioModel::Categorical(m) | RatioModel::CategoricalFactorized(m) => m.ratios(x, z),
            RatioModel::NceQ(m) => Ok(m.log_weights(x, z)?.into_iter().map(f64::exp).collect()),
            RatioModel::TreQ(m) => Ok(m.log_weights(x, z)?.into_iter().map(f64::exp).collect()),
            RatioModel::MixedProduct {
                cat_columns,
                cont_columns,
                model,
            } => {
                let d = cat_columns.len() + cont_columns.len();
                if x.ncols() != d {
                    return Err(Error::dims(format!("model expects {d} X columns")));
                }
                let xc = x.select(ndarray::Axis(1), cat_columns);
                let xn = x.select(ndarray::Axis(1), cont_columns);
                model.ratios(xc.view(), xn.view(), z)
            }
            RatioModel::UniformBaseline { seed } => {
                let mut r = rng::child_rng(*seed, rng::streams::UNIFORM_WEIGHTS);
                Ok((0..x.nrows()).map(|_| r.sample(Open01)).collect())
            }
            RatioModel::Unit => Ok(vec![1.0; x.nrows()]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Clamped, validated weights for the rows of `(x, z)`.
pub fn predict_weights(model: &RatioModel, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Prediction> {
    clamp_weights(model.raw_weights(x, z)?)
}

/// Clamp into `[MIN_WEIGHT, MAX_WEIGHT]`, counting how many entries moved.
/// NaN is an estimator failure.
pub fn clamp_weights(raw: Vec<f64>) -> Result<Prediction> {
    let mut clamped = 0;
    let mut w = raw;
    for v in &mut w {
        if v.is_nan() {
            return Err(Error::Estimator("weight model produced NaN".into()));
        }
        let c = v.clamp(MIN_WEIGHT, MAX_WEIGHT);
        if c != *v {
            clamped += 1;
            *v = c;
        }
    }
    Ok(Prediction {
        weights: WeightVector::new(w)?,
        clamped,
    })
}

/// Small labelled dataset for finite-difference checks.
#[derive(Debug, Clone)]
pub struct Probe {
    pub x: Array2<f64>,
    pub targets: Targets,
}

impl Probe {
    /// `n` points in `d` dimensions with alternating binary labels.
    pub fn logistic(n: usize, d: usize, seed: u64) -> Self {
        let mut r = rng::rng_from(seed);
        Self {
            x: Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0)),
            targets: Targets::Logistic {
                labels: (0..n).map(|i| (i % 2) as f64).collect(),
                offset: 0.0,
            },
        }
    }

    /// `n` points with classes cycling through `0..k`.
    pub fn softmax(n: usize, d: usize, k: usize, seed: u64) -> Self {
        let mut r = rng::rng_from(seed);
        Self {
            x: Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0)),
            targets: Targets::Softmax {
                classes: (0..n).map(|i| i % k).collect(),
            },
        }
    }

    fn out_dim(&self) -> usize {
        match &self.targets {
            Targets::Logistic { .. } => 1,
            Targets::Softmax { classes } => classes.iter().max().map_or(1, |m| m + 1),
        }
    }
}

/// Max relative error between analytic and central-difference gradients for
/// a network built from `spec` (initialized from `spec.seed`) on `probe`.
pub fn scorer_gradient_check(spec: &ScorerSpec, probe: &Probe) -> Result<f64> {
    if probe.x.nrows() < 4 {
        return Err(Error::param("gradient check needs at least 4 probe points"));
    }
    let net = Mlp::init(
        &spec.sizes(probe.x.ncols(), probe.out_dim()),
        spec.activation,
        &mut rng::rng_from(spec.seed),
    )?;
    Ok(mlp::gradient_check(&net, probe.x.view(), &probe.targets))
}

/// Gradient checks for every architecture the default configuration trains:
/// the NCE-q/TRE-q scorer and the categorical classifiers, plus a linear
/// scorer and a single tanh layer as references.
pub fn default_gradient_checks() -> Result<Vec<(String, f64)>> {
    let default = ScorerSpec::default();
    let linear = ScorerSpec {
        hidden_layers: vec![],
        ..default.clone()
    };
    let single = ScorerSpec {
        hidden_layers: vec![8],
        ..default.clone()
    };
    let cases = [
        ("linear scorer", &linear, Probe::logistic(8, 3, 1)),
        ("tanh 8 scorer", &single, Probe::logistic(8, 3, 2)),
        ("default scorer (x, z)", &default, Probe::logistic(12, 4, 3)),
        ("default binary classifier", &default, Probe::softmax(12, 2, 2, 4)),
        ("default 4-class classifier", &default, Probe::softmax(12, 3, 4, 5)),
    ];
    cases
        .into_iter()
        .map(|(name, spec, probe)| Ok((name.to_string(), scorer_gradient_check(spec, &probe)?)))
        .collect()
}
