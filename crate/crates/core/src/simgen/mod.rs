//! Seeded synthetic data with known importance weights.
//!
//! Every generator returns the observed triples together with
//! `w = q(x) / p(x | z)` for a q it can also sample from ([`TrueQ`]), so
//! tests with true weights can draw fresh q-samples.

mod binary;
mod conditional;
mod continuous;
mod exponential;
pub mod io;

use ndarray::Array2;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

pub use binary::gen_binary;
pub use conditional::gen_conditional_dep;
pub use continuous::{gen_continuous, gen_mixed};
pub use exponential::gen_exponential_marginal;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats::sigmoid;

/// Number of leading Z columns that drive X.
pub const CONFOUNDED_DIMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependence {
    Linear,
    /// `x²`
    Quadratic,
    /// `exp(−0.1x²)·cos(πx)`
    Cosine,
    ExponentialMarginal,
    ConditionalDep,
}

impl Dependence {
    /// Transform applied to each X coordinate before it enters Y's location.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Dependence::Quadratic => x * x,
            Dependence::Cosine => (-0.1 * x * x).exp() * (std::f64::consts::PI * x).cos(),
            _ => x,
        }
    }
}

/// How the Gaussian generators realize `X | Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Rejection sampling from the `N(0, θφI)` proposal.
    #[default]
    Rejection,
    /// Draw `X | Z` directly; same target distribution, no rejection step.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub n: usize,
    pub beta_xy: f64,
    pub beta_xz: f64,
    /// Y–Z coupling; generators read as many entries as they need.
    pub beta_yz: Vec<f64>,
    pub theta: f64,
    pub phi: f64,
    pub d_x: usize,
    pub d_y: usize,
    pub d_z: usize,
    pub dependence: Dependence,
    pub sampler: Sampler,
    /// Binary generator only: use the alternative branch. Defaults to
    /// `beta_xy != 0`.
    pub alternative: Option<bool>,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n: 1000,
            beta_xy: 0.0,
            beta_xz: 0.75,
            beta_yz: vec![0.5, 0.0],
            theta: 2.0,
            phi: 2.0,
            d_x: 1,
            d_y: 1,
            d_z: 1,
            dependence: Dependence::Linear,
            sampler: Sampler::Rejection,
            alternative: None,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n must be ≥ 1"));
        }
        if self.d_x == 0 || self.d_y == 0 || self.d_z == 0 {
            return Err(Error::param("dimensions must be ≥ 1"));
        }
        if !(self.theta > 0.0 && self.phi > 0.0) || !self.theta.is_finite() || !self.phi.is_finite() {
            return Err(Error::param("theta and phi must be positive"));
        }
        if !self.beta_xy.is_finite() || !self.beta_xz.is_finite() {
            return Err(Error::param("betas must be finite"));
        }
        if self.beta_yz.iter().any(|b| !b.is_finite()) {
            return Err(Error::param("beta_yz must be finite"));
        }
        Ok(())
    }

    pub(crate) fn beta_yz_at(&self, k: usize) -> f64 {
        self.beta_yz.get(k).copied().unwrap_or(0.0)
    }

    pub(crate) fn require_univariate(&self, what: &str) -> Result<()> {
        if self.d_x != 1 || self.d_y != 1 || self.d_z != 1 {
            return Err(Error::param(format!("{what} generator is univariate")));
        }
        Ok(())
    }
}

/// `β_XZ` on the first three Z coordinates, zero after.
pub fn beta_xz_vector(beta_xz: f64, d_z: usize) -> Vec<f64> {
    (0..d_z)
        .map(|k| if k < CONFOUNDED_DIMS { beta_xz } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

/// The q marginal that a dataset's true weights refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TrueQ {
    /// `N(0, φI + s²11ᵀ)` in `d` dimensions.
    Gaussian { phi: f64, s2: f64, d: usize },
    /// Independent Bernoulli(`p`) coordinates.
    Bernoulli { p: f64, d: usize },
    /// `μ ~ N(0, s²)`, continuous block `N(μ1, φI)`, binary block
    /// Bernoulli(σ(μ)): the marginal of the mixed generator.
    GaussianBernoulli {
        phi: f64,
        s2: f64,
        d_cont: usize,
        d_bin: usize,
    },
    /// Exponential with the given mean.
    Exponential { mean: f64 },
}

impl TrueQ {
    pub fn dim(&self) -> usize {
        match self {
            TrueQ::Gaussian { d, .. } | TrueQ::Bernoulli { d, .. } => *d,
            TrueQ::GaussianBernoulli { d_cont, d_bin, .. } => d_cont + d_bin,
            TrueQ::Exponential { .. } => 1,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            match *self {
                TrueQ::Gaussian { phi, s2, .. } => {
                    let mu = s2.sqrt() * normal(rng);
                    row.iter_mut().for_each(|v| *v = mu + phi.sqrt() * normal(rng));
                }
                TrueQ::Bernoulli { p, .. } => {
                    row.iter_mut().for_each(|v| *v = bernoulli(p, rng));
                }
                TrueQ::GaussianBernoulli {
                    phi, s2, d_cont, ..
                } => {
                    let mu = s2.sqrt() * normal(rng);
                    let p = sigmoid(mu);
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = if k < d_cont {
                            mu + phi.sqrt() * normal(rng)
                        } else {
                            bernoulli(p, rng)
                        };
                    }
                }
                TrueQ::Exponential { mean } => {
                    row[0] = mean * Exp::new(1.0).expect("rate 1").sample(rng);
                }
            }
        }
        out
    }
}

pub(crate) fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn bernoulli(p: f64, rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Observed data plus generator-side ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
    pub true_weights: Option<Vec<f64>>,
    pub ground_truth_null: bool,
    pub x_kinds: Vec<ColumnKind>,
    pub true_q: Option<TrueQ>,
    pub info: GenInfo,
}

/// Sampler diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenInfo {
    /// Accepted / proposed, for rejection sampling.
    pub acceptance_rate: Option<f64>,
    /// The rejection envelope had to be raised after the first batch.
    pub envelope_raised: bool,
    /// The requested (Y, Z) covariance was not positive definite and was
    /// projected.
    pub covariance_projected: bool,
}

impl Dataset {
    /// Dataset without generator knowledge; all X columns continuous.
    pub fn observed(x: Array2<f64>, y: Array2<f64>, z: Array2<f64>) -> Result<Self> {
        let d = Self {
            x_kinds: vec![ColumnKind::Continuous; x.ncols()],
            x,
            y,
            z,
            true_weights: None,
            ground_truth_null: false,
            true_q: None,
            info: GenInfo::default(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.y.nrows() != n || self.z.nrows() != n {
            return Err(Error::Data(format!(
                "row counts differ: X {}, Y {}, Z {}",
                n,
                self.y.nrows(),
                self.z.nrows()
            )));
        }
        if self.x_kinds.len() != self.x.ncols() {
            return Err(Error::Data("one column kind per X column required".into()));
        }
        let finite = |a: &Array2<f64>| a.iter().all(|v| v.is_finite());
        if !(finite(&self.x) && finite(&self.y) && finite(&self.z)) {
            return Err(Error::Data("non-finite values in X, Y or Z".into()));
        }
        if let Some(w) = &self.true_weights {
            if w.len() != n || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Data("invalid true weights".into()));
            }
        }
        Ok(())
    }

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        use ndarray::Axis;
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            z: self.z.select(Axis(0), idx),
            true_weights: self
                .true_weights
                .as_ref()
                .map(|w| idx.iter().map(|&i| w[i]).collect()),
            ground_truth_null: self.ground_truth_null,
            x_kinds: self.x_kinds.clone(),
            true_q: self.true_q.clone(),
            info: self.info.clone(),
        }
    }

    pub fn categorical_columns(&self) -> Vec<usize> {
        self.columns_of(ColumnKind::Categorical)
    }

    pub fn continuous_columns(&self) -> Vec<usize> {
        self.columns_of(ColumnKind::Continuous)
    }

    fn columns_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.x_kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Generator families, addressable by name from configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Binary,
    Continuous,
    Mixed,
    Exponential,
    Conditional,
}

pub fn generate(kind: Generator, params: &GenParams) -> Result<Dataset> {
    match kind {
        Generator::Binary => gen_binary(params),
        Generator::Continuous => gen_continuous(params),
        Generator::Mixed => gen_mixed(params),
        Generator::Exponential => gen_exponential_marginal(params),
        Generator::Conditional => gen_conditional_dep(params),
    }
}
