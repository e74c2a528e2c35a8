//! Minibatch training with early stopping on a held-out validation split.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Adam, Mlp, Targets};
use crate::error::{Error, Result};
use crate::rng;

/// Fraction of the training data held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain minibatch gradient descent with a fixed step.
    Sgd,
    Adam,
}

/// Architecture and optimization settings for every learned ratio model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSpec {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Product (q-sample) pairs per joint pair, `ν`.
    pub nu: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        Self {
            hidden_layers: vec![32, 32],
            activation: Activation::Tanh,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            nu: 1.0,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(Error::param("hidden layer widths must be ≥ 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate must be > 0"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::param("batch_size and max_epochs must be ≥ 1"));
        }
        if self.patience == 0 {
            return Err(Error::param("patience must be ≥ 1"));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::param("nu must be > 0"));
        }
        Ok(())
    }

    /// Layer sizes `[in, hidden…, out]`.
    pub fn sizes(&self, in_dim: usize, out_dim: usize) -> Vec<usize> {
        let mut s = vec![in_dim];
        s.extend(&self.hidden_layers);
        s.push(out_dim);
        s
    }
}

/// Per-column affine standardization stored with each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(c, m)| {
                let v = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            mean: mean.to_vec(),
            scale,
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (mut c, (m, s)) in out.axis_iter_mut(Axis(1)).zip(self.mean.iter().zip(&self.scale)) {
            c.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Network plus input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub net: Mlp,
    pub standardizer: Standardizer,
}

impl Scorer {
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.standardizer.dim() {
            return Err(Error::dims(format!(
                "scorer expects {} input columns, got {}",
                self.standardizer.dim(),
                x.ncols()
            )));
        }
        Ok(self.net.forward(self.standardizer.apply(x).view()))
    }
}

/// What happened during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// False when `max_epochs` ran out before early stopping triggered.
    pub converged: bool,
}

/// Split `0..n` into (train, validation) index sets.
fn split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::child_rng(seed, 0));
    let n_val = ((n as f64) * VALIDATION_FRACTION).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Train a network on `(inputs, targets)`.
pub fn fit(
    inputs: ArrayView2<f64>,
    targets: &Targets,
    out_dim: usize,
    spec: &ScorerSpec,
    seed: u64,
) -> Result<(Scorer, TrainReport)> {
    spec.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Empty("training inputs"));
    }
    if targets.len() != n {
        return Err(Error::dims("targets and inputs differ in length"));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training inputs"));
    }
    if let Targets::Logistic { labels, .. } = targets {
        if labels.iter().all(|&y| y == labels[0]) {
            return Err(Error::Estimator("all training labels are identical".into()));
        }
    }

    let (train_idx, val_idx) = split(n, seed);
    let x_train_raw = inputs.select(Axis(0), &train_idx);
    let standardizer = Standardizer::fit(x_train_raw.view());
    let x_train = standardizer.apply(x_train_raw.view());
    let t_train = targets.subset(&train_idx);
    let (x_val, t_val) = if val_idx.is_empty() {
        (x_train.clone(), t_train.clone())
    } else {
        (
            standardizer.apply(inputs.select(Axis(0), &val_idx).view()),
            targets.subset(&val_idx),
        )
    };

    let mut net = Mlp::init(
        &spec.sizes(inputs.ncols(), out_dim),
        spec.activation,
        &mut rng::child_rng(seed, 1),
    )?;
    let mut adam = Adam::new(net.n_params());
    let mut batch_rng = rng::child_rng(seed, 2);

    let mut report = TrainReport {
        best_validation_loss: t_val.loss(&net.forward(x_val.view())),
        ..TrainReport::default()
    };
    let mut best = net.clone();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..x_train.nrows()).collect();
    for epoch in 1..=spec.max_epochs {
        order.shuffle(&mut batch_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let tb = t_train.subset(chunk);
            let mut batch_loss = 0.0;
            let g = net.backward(xb.view(), |s| {
                batch_loss = tb.loss(s);
                tb.d_scores(s)
            });
            epoch_loss += batch_loss * chunk.len() as f64;
            match spec.optimizer {
                Optimizer::Sgd => net.sgd_step(&g, spec.learning_rate),
                Optimizer::Adam => adam.step(&mut net, &g, spec.learning_rate),
            }
        }
        report.train_losses.push(epoch_loss / order.len() as f64);
        let val_loss = t_val.loss(&net.forward(x_val.view()));
        if !val_loss.is_finite() {
            return Err(Error::Estimator(format!(
                "validation loss diverged at epoch {epoch}"
            )));
        }
        report.validation_losses.push(val_loss);
        report.epochs = epoch;
        if val_loss < report.best_validation_loss {
            report.best_validation_loss = val_loss;
            report.best_epoch = epoch;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= spec.patience {
                report.converged = true;
                break;
            }
        }
    }
    if !report.converged {
        log::warn!(
            "training stopped at max_epochs = {} without early stopping",
            spec.max_epochs
        );
    }
    Ok((
        Scorer {
            net: best,
            standardizer,
        },
        report,
    ))
}
