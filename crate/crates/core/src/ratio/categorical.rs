//! Ratios `p(x | a) / p(x | b)` for categorical x, estimated with frequency
//! tables (empty conditioning set) or softmax classifiers.
//!
//! Probabilities are Laplace-smoothed over the observed categories plus one
//! slot for anything unseen in training:
//! `p̂ = (n·p + 1) / (n + K)` with `K = observed + 1`, which reduces to
//! `(count + 1) / (n + K)` for frequency tables. A category never seen in
//! training therefore gets weight exactly 1.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::{softmax_rows, Targets};
use super::train::{fit, Scorer, ScorerSpec, TrainReport};
use crate::error::{Error, Result};
use crate::rng;

/// From this many categorical columns on, the joint category space is
/// replaced by a product over columns.
pub const FACTORIZE_FROM: usize = 8;

fn key(row: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 are the same category
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// A conditional distribution over the observed categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Conditional {
    /// Single observed category: probability 1.
    Constant,
    /// Empirical frequencies, ignoring any conditioning input.
    Frequencies { counts: Vec<usize> },
    /// Softmax classifier over the observed categories.
    Classifier { scorer: Scorer },
}

impl Conditional {
    /// `n_train · p̂(class)` per row, 0 for categories unseen in training.
    fn pseudo_counts(
        &self,
        classes: &[Option<usize>],
        inputs: Option<ArrayView2<f64>>,
        n_train: usize,
    ) -> Result<Vec<f64>> {
        match self {
            Conditional::Constant => Ok(classes
                .iter()
                .map(|c| c.map_or(0.0, |_| n_train as f64))
                .collect()),
            Conditional::Frequencies { counts } => Ok(classes
                .iter()
                .map(|c| c.map_or(0.0, |k| counts[k] as f64))
                .collect()),
            Conditional::Classifier { scorer } => {
                let inputs =
                    inputs.ok_or_else(|| Error::dims("classifier needs conditioning inputs"))?;
                let p = softmax_rows(&scorer.scores(inputs)?);
                Ok(classes
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.map_or(0.0, |k| n_train as f64 * p[[i, k]]))
                    .collect())
            }
        }
    }
}

/// `p̂(x | a) / p̂(x | b)` for one block of categorical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalRatio {
    /// Observed category tuples, in class-index order.
    pub categories: Vec<Vec<f64>>,
    pub n_train: usize,
    pub numerator: Conditional,
    pub denominator: Conditional,
}

impl CategoricalRatio {
    fn index(&self) -> HashMap<Vec<u64>, usize> {
        self.categories
            .iter()
            .enumerate()
            .map(|(k, c)| (key(c), k))
            .collect()
    }

    fn classes(&self, x: ArrayView2<f64>) -> Result<Vec<Option<usize>>> {
        let width = self.categories.first().map_or(0, Vec::len);
        if x.ncols() != width {
            return Err(Error::dims(format!(
                "categorical block has {width} columns, got {}",
                x.ncols()
            )));
        }
        let idx = self.index();
        Ok(x
            .rows()
            .into_iter()
            .map(|r| idx.get(&key(&r.to_vec())).copied())
            .collect())
    }

    /// Smoothed ratio per row.
    pub fn ratios(
        &self,
        x: ArrayView2<f64>,
        num_inputs: Option<ArrayView2<f64>>,
        den_inputs: Option<ArrayView2<f64>>,
    ) -> Result<Vec<f64>> {
        let classes = self.classes(x)?;
        let num = self.numerator.pseudo_counts(&classes, num_inputs, self.n_train)?;
        let den = self.denominator.pseudo_counts(&classes, den_inputs, self.n_train)?;
        // the common normalizer n + K cancels
        Ok(num.iter().zip(&den).map(|(a, b)| (a + 1.0) / (b + 1.0)).collect())
    }

    /// Fit numerator `p(x | a)` (frequencies when `num_inputs` is `None`)
    /// and denominator `p(x | b)`.
    pub fn train(
        x: ArrayView2<f64>,
        num_inputs: Option<ArrayView2<f64>>,
        den_inputs: ArrayView2<f64>,
        spec: &ScorerSpec,
        seed: u64,
    ) -> Result<(Self, Vec<TrainReport>)> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(Error::Empty("categorical X"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("categorical X"));
        }
        let mut categories: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        categories.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        categories.dedup_by(|a, b| key(a) == key(b));
        let mut model = Self {
            categories,
            n_train: n,
            numerator: Conditional::Constant,
            denominator: Conditional::Constant,
        };
        let classes: Vec<usize> = model
            .classes(x)?
            .into_iter()
            .map(|c| c.expect("training rows are observed"))
            .collect();
        let k = model.categories.len();
        let mut reports = Vec::new();
        if k > 1 {
            let mut fit_conditional = |inputs: Option<ArrayView2<f64>>, s: u64| -> Result<Conditional> {
                match inputs {
                    None => {
                        let mut counts = vec![0; k];
                        classes.iter().for_each(|&c| counts[c] += 1);
                        Ok(Conditional::Frequencies { counts })
                    }
                    Some(a) => {
                        if a.nrows() != n {
                            return Err(Error::dims("conditioning inputs and X differ in rows"));
                        }
                        let targets = Targets::Softmax {
                            classes: classes.clone(),
                        };
                        let (scorer, rep) = fit(a, &targets, k, spec, s)?;
                        reports.push(rep);
                        Ok(Conditional::Classifier { scorer })
                    }
                }
            };
            model.numerator = fit_conditional(num_inputs, rng::derive_seed(seed, 1))?;
            model.denominator = fit_conditional(Some(den_inputs), rng::derive_seed(seed, 2))?;
        }
        Ok((model, reports))
    }
}

/// Weights `p̂(x) / p̂(x | z)` for categorical treatments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalModel {
    pub x_dim: usize,
    pub z_dim: usize,
    /// One block per column when factorized, otherwise a single block.
    pub blocks: Vec<CategoricalRatio>,
}

impl CategoricalModel {
    pub fn factorized(&self) -> bool {
        self.x_dim >= FACTORIZE_FROM
    }

    pub fn ratios(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.x_dim || z.ncols() != self.z_dim || x.nrows() != z.nrows() {
            return Err(Error::dims(format!(
                "model trained on d_x = {}, d_z = {}; got X {:?}, Z {:?}",
                self.x_dim,
                self.z_dim,
                x.dim(),
                z.dim()
            )));
        }
        block_product(&self.blocks, x, None, Some(z))
    }
}

/// Column groups: all columns together, or one per column from
/// [`FACTORIZE_FROM`] columns on.
pub(crate) fn column_groups(d: usize) -> Vec<Vec<usize>> {
    if d >= FACTORIZE_FROM {
        (0..d).map(|j| vec![j]).collect()
    } else {
        vec![(0..d).collect()]
    }
}

pub(crate) fn block_product(
    blocks: &[CategoricalRatio],
    x: ArrayView2<f64>,
    num_inputs: Option<ArrayView2<f64>>,
    den_inputs: Option<ArrayView2<f64>>,
) -> Result<Vec<f64>> {
    let groups = column_groups(x.ncols());
    let mut out = vec![1.0; x.nrows()];
    for (block, cols) in blocks.iter().zip(&groups) {
        let xb = x.select(ndarray::Axis(1), cols);
        for (o, r) in out
            .iter_mut()
            .zip(block.ratios(xb.view(), num_inputs, den_inputs)?)
        {
            *o *= r;
        }
    }
    Ok(out)
}

pub(crate) fn train_blocks(
    x: ArrayView2<f64>,
    num_inputs: Option<ArrayView2<f64>>,
    den_inputs: ArrayView2<f64>,
    spec: &ScorerSpec,
    seed: u64,
) -> Result<(Vec<CategoricalRatio>, Vec<TrainReport>)> {
    let mut blocks = Vec::new();
    let mut reports = Vec::new();
    for (g, cols) in column_groups(x.ncols()).into_iter().enumerate() {
        let xb: Array2<f64> = x.select(ndarray::Axis(1), &cols);
        let (b, r) = CategoricalRatio::train(
            xb.view(),
            num_inputs,
            den_inputs,
            spec,
            rng::derive_seed(seed, g as u64),
        )?;
        blocks.push(b);
        reports.extend(r);
    }
    Ok((blocks, reports))
}

/// Train `p̂(x) / p̂(x | z)`; `q = p` in this mode.
pub fn train_categorical(
    x: ArrayView2<f64>,
    z: ArrayView2<f64>,
    spec: &ScorerSpec,
) -> Result<(CategoricalModel, Vec<TrainReport>)> {
    if x.nrows() != z.nrows() {
        return Err(Error::dims("X and Z row counts differ"));
    }
    let (blocks, reports) = train_blocks(x, None, z, spec, spec.seed)?;
    Ok((
        CategoricalModel {
            x_dim: x.ncols(),
            z_dim: z.ncols(),
            blocks,
        },
        reports,
    ))
}
