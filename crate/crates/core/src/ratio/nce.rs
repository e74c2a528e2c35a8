//! NCE-q and TRE-q: density ratios `q(x)p(z) / p(x, z)` learned by
//! classifying joint pairs `(x, z)` against product pairs `(x^q, z)`.
//!
//! With `ν` product pairs per joint pair, a scorer `s(x, z)` enters the
//! classifier as `P(product | x, z) = σ(s + ln ν)`, so at the optimum
//! `s = ln w`.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::mlp::Targets;
use super::train::{fit, Scorer, ScorerSpec, TrainReport};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::log_sigmoid;

/// A set of `(x, z)` pairs, one per row.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
}

impl PairSet {
    pub fn new(x: Array2<f64>, z: Array2<f64>) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::dims(format!(
                "{} x rows vs {} z rows",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Empty("pair set"));
        }
        Ok(Self { x, z })
    }

    /// Product pairs `(x^q_i, z_{i mod n})` for q-samples `xq` and the `n`
    /// joint confounder rows `z`.
    pub fn product(xq: Array2<f64>, z: ArrayView2<f64>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(Error::Empty("confounders for product pairs"));
        }
        let idx: Vec<usize> = (0..xq.nrows()).map(|i| i % z.nrows()).collect();
        Self::new(xq, z.select(Axis(0), &idx))
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn features(&self) -> Array2<f64> {
        concatenate![Axis(1), self.x, self.z]
    }
}

/// NCE loss per product sample, for scores on joint and product pairs.
pub fn nce_pair_loss(joint_scores: &[f64], product_scores: &[f64], nu: f64) -> f64 {
    let off = nu.ln();
    let a: f64 = product_scores.iter().map(|&s| log_sigmoid(s + off)).sum();
    let b: f64 = joint_scores.iter().map(|&s| log_sigmoid(-(s + off))).sum();
    -(a + b) / product_scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NceModel {
    pub x_dim: usize,
    pub z_dim: usize,
    pub scorer: Scorer,
}

impl NceModel {
    /// Log-weights `s(x, z)`.
    pub fn log_weights(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Vec<f64>> {
        check_dims(x, z, self.x_dim, self.z_dim)?;
        let f = concatenate![Axis(1), x, z];
        Ok(self.scorer.scores(f.view())?.column(0).to_vec())
    }
}

fn check_dims(x: ArrayView2<f64>, z: ArrayView2<f64>, dx: usize, dz: usize) -> Result<()> {
    if x.ncols() != dx || z.ncols() != dz || x.nrows() != z.nrows() {
        return Err(Error::dims(format!(
            "model trained on d_x = {dx}, d_z = {dz}; got X {:?}, Z {:?}",
            x.dim(),
            z.dim()
        )));
    }
    Ok(())
}

fn stacked_problem(
    negative: ArrayView2<f64>,
    positive: ArrayView2<f64>,
    offset: f64,
) -> (Array2<f64>, Targets) {
    let inputs = concatenate![Axis(0), negative, positive];
    let mut labels = vec![0.0; negative.nrows()];
    labels.extend(std::iter::repeat_n(1.0, positive.nrows()));
    (inputs, Targets::Logistic { labels, offset })
}

/// Number of product pairs for `n` joint pairs at noise ratio `nu`.
pub fn product_count(n: usize, nu: f64) -> usize {
    ((n as f64 * nu).round() as usize).max(1)
}

fn check_pairs(joint: &PairSet, product: &PairSet, nu: f64) -> Result<()> {
    if joint.x.ncols() != product.x.ncols() || joint.z.ncols() != product.z.ncols() {
        return Err(Error::dims("joint and product pairs differ in dimension"));
    }
    let expected = product_count(joint.len(), nu);
    if product.len() != expected {
        return Err(Error::dims(format!(
            "nu = {nu} needs {expected} product pairs for {} joint pairs, got {}",
            joint.len(),
            product.len()
        )));
    }
    Ok(())
}

/// Train an NCE-q ratio model. `product` must hold
/// [`product_count`]`(joint.len(), spec.nu)` pairs.
pub fn train_nce_q(
    joint: &PairSet,
    product: &PairSet,
    spec: &ScorerSpec,
) -> Result<(NceModel, TrainReport)> {
    spec.validate()?;
    check_pairs(joint, product, spec.nu)?;
    let ratio = product.len() as f64 / joint.len() as f64;
    let (inputs, targets) = stacked_problem(
        joint.features().view(),
        product.features().view(),
        ratio.ln(),
    );
    let (scorer, report) = fit(inputs.view(), &targets, 1, spec, spec.seed)?;
    Ok((
        NceModel {
            x_dim: joint.x.ncols(),
            z_dim: joint.z.ncols(),
            scorer,
        },
        report,
    ))
}

/// Interpolation levels `0 = α₀ < α₁ < … < α_m = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BridgeSchedule {
    alphas: Vec<f64>,
}

impl BridgeSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 || alphas[0] != 0.0 || *alphas.last().unwrap() != 1.0 {
            return Err(Error::param("bridge schedule must run from 0 to 1"));
        }
        if alphas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("bridge schedule must be strictly increasing"));
        }
        Ok(Self { alphas })
    }

    /// `α_k = k/m`.
    pub fn linear(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::param("bridge count must be ≥ 1"));
        }
        Self::new((0..=m).map(|k| k as f64 / m as f64).collect())
    }

    pub fn m(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `√(1 − α²)·x + α·x^q`.
    pub fn interpolate(&self, k: usize, x: ArrayView2<f64>, xq: ArrayView2<f64>) -> Array2<f64> {
        let a = self.alphas[k];
        let b = (1.0 - a * a).max(0.0).sqrt();
        let mut out = x.to_owned();
        out.zip_mut_with(&xq, |v, &q| *v = b * *v + a * q);
        out
    }
}

impl TryFrom<Vec<f64>> for BridgeSchedule {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BridgeSchedule> for Vec<f64> {
    fn from(s: BridgeSchedule) -> Self {
        s.alphas
    }
}

impl Default for BridgeSchedule {
    fn default() -> Self {
        Self::linear(3).expect("valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreModel {
    pub x_dim: usize,
    pub z_dim: usize,
    pub schedule: BridgeSchedule,
    /// Bridge `k` scores level `k + 1` against level `k`.
    pub bridges: Vec<Scorer>,
}

impl TreModel {
    /// Log-weights `Σₖ sₖ(x, z)`.
    pub fn log_weights(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Vec<f64>> {
        check_dims(x, z, self.x_dim, self.z_dim)?;
        let f = concatenate![Axis(1), x, z];
        let mut total = vec![0.0; x.nrows()];
        for b in &self.bridges {
            for (t, s) in total.iter_mut().zip(b.scores(f.view())?.column(0)) {
                *t += s;
            }
        }
        Ok(total)
    }
}

/// Seed for bridge `k`; bridge 0 shares the NCE-q seed.
fn bridge_seed(seed: u64, k: usize) -> u64 {
    if k == 0 {
        seed
    } else {
        rng::derive_seed(seed, 1000 + k as u64)
    }
}

/// Train a TRE-q model. Product row `i` is bridged to joint row
/// `i mod n`, whose `z` is held fixed along the bridge, so every level has
/// the same number of rows.
pub fn train_tre_q(
    joint: &PairSet,
    product: &PairSet,
    schedule: &BridgeSchedule,
    spec: &ScorerSpec,
) -> Result<(TreModel, Vec<TrainReport>)> {
    spec.validate()?;
    check_pairs(joint, product, spec.nu)?;
    let idx: Vec<usize> = (0..product.len()).map(|i| i % joint.len()).collect();
    let x0 = joint.x.select(Axis(0), &idx);
    let z0 = joint.z.select(Axis(0), &idx);
    let levels: Vec<Array2<f64>> = (0..=schedule.m())
        .map(|k| {
            let xk = schedule.interpolate(k, x0.view(), product.x.view());
            concatenate![Axis(1), xk, z0]
        })
        .collect();
    let mut bridges = Vec::with_capacity(schedule.m());
    let mut reports = Vec::with_capacity(schedule.m());
    for k in 0..schedule.m() {
        let (inputs, targets) =
            stacked_problem(levels[k].view(), levels[k + 1].view(), 0.0);
        let (scorer, report) = fit(inputs.view(), &targets, 1, spec, bridge_seed(spec.seed, k))?;
        bridges.push(scorer);
        reports.push(report);
    }
    Ok((
        TreModel {
            x_dim: joint.x.ncols(),
            z_dim: joint.z.ncols(),
            schedule: schedule.clone(),
            bridges,
        },
        reports,
    ))
}
