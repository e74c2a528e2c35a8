//! A small fully connected network with hand-written backpropagation.
//!
//! Parameters are stored per layer (`W` is `out × in`, `b` has length `out`)
//! and can be flattened in layer order `W₁, b₁, W₂, b₂, …` for serialization
//! and finite-difference checks.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats::log_sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Multilayer perceptron mapping `in_dim` inputs to `out_dim` raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl From<Mlp> for MlpRecord {
    fn from(m: Mlp) -> Self {
        MlpRecord {
            params: m.flat_params(),
            sizes: m.sizes,
            activation: m.activation,
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(r: MlpRecord) -> Result<Self> {
        let mut m = Mlp::zeros(&r.sizes, r.activation)?;
        m.set_flat_params(&r.params)?;
        Ok(m)
    }
}

/// Gradients with the same shapes as the network's layers.
#[derive(Debug, Clone)]
pub struct Gradient {
    layers: Vec<Layer>,
}

impl Gradient {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
    out
}

impl Mlp {
    /// `sizes = [in, hidden…, out]`.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::param(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|p| Layer {
                w: Array2::zeros((p[1], p[0])),
                b: Array1::zeros(p[1]),
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(sizes, activation)?;
        for l in &mut m.layers {
            let (out, inp) = l.w.dim();
            let a = (6.0 / (inp + out) as f64).sqrt();
            l.w.mapv_inplace(|_| rng.random_range(-a..a));
        }
        Ok(m)
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::dims(format!(
                "{} parameters for a network with {}",
                p.len(),
                self.n_params()
            )));
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    /// Raw output scores, one row per input row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.w.t());
            z += &l.b;
            if k < last {
                self.activation.apply(&mut z);
            }
            a = z;
        }
        a
    }

    /// Forward pass keeping every layer's output, then backpropagate
    /// `d_out = ∂loss/∂scores`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        d_out_fn: impl FnOnce(&Array2<f64>) -> Array2<f64>,
    ) -> Gradient {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&l.w.t());
            z += &l.b;
            if k < last {
                self.activation.apply(&mut z);
            }
            acts.push(z);
        }
        let mut delta = d_out_fn(&acts[last + 1]);
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let gw = delta.t().dot(&acts[k]);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Layer { w: gw, b: gb });
            if k > 0 {
                let mut d_prev = delta.dot(&l.w);
                let act = self.activation;
                d_prev.zip_mut_with(&acts[k], |d, &a| *d *= act.derivative_from_output(a));
                delta = d_prev;
            }
        }
        grads.reverse();
        Gradient { layers: grads }
    }

    pub(crate) fn sgd_step(&mut self, g: &Gradient, lr: f64) {
        for (l, gl) in self.layers.iter_mut().zip(&g.layers) {
            l.w.scaled_add(-lr, &gl.w);
            l.b.scaled_add(-lr, &gl.b);
        }
    }
}

/// Adam optimizer state.
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub(crate) fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, net: &mut Mlp, g: &Gradient, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut idx = 0;
        for (l, gl) in net.layers.iter_mut().zip(&g.layers) {
            let params = l.w.iter_mut().chain(l.b.iter_mut());
            let grads = gl.w.iter().chain(gl.b.iter());
            for (p, &gv) in params.zip(grads) {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gv;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gv * gv;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                idx += 1;
            }
        }
    }
}

/// Training targets and their loss.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Binary labels with logistic loss on `score + offset`.
    Logistic { labels: Vec<f64>, offset: f64 },
    /// Class indices with softmax cross-entropy.
    Softmax { classes: Vec<usize> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Logistic { labels, .. } => labels.len(),
            Targets::Softmax { classes } => classes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Logistic { labels, offset } => Targets::Logistic {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                offset: *offset,
            },
            Targets::Softmax { classes } => Targets::Softmax {
                classes: idx.iter().map(|&i| classes[i]).collect(),
            },
        }
    }

    /// Mean loss over the rows of `scores`.
    pub fn loss(&self, scores: &Array2<f64>) -> f64 {
        let n = scores.nrows() as f64;
        match self {
            Targets::Logistic { labels, offset } => {
                scores
                    .column(0)
                    .iter()
                    .zip(labels)
                    .map(|(&s, &y)| {
                        let t = s + offset;
                        -(y * log_sigmoid(t) + (1.0 - y) * log_sigmoid(-t))
                    })
                    .sum::<f64>()
                    / n
            }
            Targets::Softmax { classes } => {
                scores
                    .rows()
                    .into_iter()
                    .zip(classes)
                    .map(|(row, &c)| log_sum_exp(row.iter().copied()) - row[c])
                    .sum::<f64>()
                    / n
            }
        }
    }

    /// `∂ mean loss / ∂ scores`.
    pub fn d_scores(&self, scores: &Array2<f64>) -> Array2<f64> {
        let n = scores.nrows() as f64;
        match self {
            Targets::Logistic { labels, offset } => {
                let mut d = scores.clone();
                for (v, &y) in d.column_mut(0).iter_mut().zip(labels) {
                    *v = (crate::stats::sigmoid(*v + offset) - y) / n;
                }
                d
            }
            Targets::Softmax { classes } => {
                let mut d = softmax_rows(scores);
                for (mut row, &c) in d.rows_mut().into_iter().zip(classes) {
                    row[c] -= 1.0;
                    row.mapv_inplace(|v| v / n);
                }
                d
            }
        }
    }
}

pub fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Largest relative discrepancy between the analytic loss gradient and
/// central finite differences, over every parameter.
pub fn gradient_check(net: &Mlp, x: ArrayView2<f64>, targets: &Targets) -> f64 {
    let analytic = net.backward(x, |s| targets.d_scores(s)).flat();
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + FD_STEP;
        probe.set_flat_params(&p).expect("same size");
        let up = targets.loss(&probe.forward(x));
        p[k] = base[k] - FD_STEP;
        probe.set_flat_params(&p).expect("same size");
        let down = targets.loss(&probe.forward(x));
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}
