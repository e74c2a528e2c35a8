//! Binary treatment with a scalar confounder.
//!
//! `Z ~ N(0, 1)`, `X | Z ~ Bernoulli(σ(Z))`. Under the null branch
//! `Y | Z ~ N(β_XY·Z, τ²)`; under the alternative
//! `Y | X, Z ~ N(β_XY·(2X − 1)·|Z|, τ²)`, with `τ² = θ`.
//! By symmetry of `Z`, `P(X = 1) = 1/2`, so the true weights are
//! `w = 1/2 / P(X = x | Z)`.

use ndarray::Array2;

use super::{bernoulli, normal, ColumnKind, Dataset, GenInfo, GenParams, TrueQ};
use crate::error::Result;
use crate::rng::{child_rng, streams};
use crate::stats::sigmoid;

pub fn gen_binary(p: &GenParams) -> Result<Dataset> {
    p.validate()?;
    p.require_univariate("binary")?;
    let alternative = p.alternative.unwrap_or(p.beta_xy != 0.0);
    let tau = p.theta.sqrt();
    let mut rng = child_rng(p.seed, streams::GENERATOR);
    let mut x = Array2::zeros((p.n, 1));
    let mut y = Array2::zeros((p.n, 1));
    let mut z = Array2::zeros((p.n, 1));
    let mut w = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let zi = normal(&mut rng);
        let pi = sigmoid(zi);
        let xi = bernoulli(pi, &mut rng);
        let loc = if alternative {
            p.beta_xy * (2.0 * xi - 1.0) * zi.abs()
        } else {
            p.beta_xy * zi
        };
        z[[i, 0]] = zi;
        x[[i, 0]] = xi;
        y[[i, 0]] = loc + tau * normal(&mut rng);
        w.push(0.5 / if xi == 1.0 { pi } else { 1.0 - pi });
    }
    Ok(Dataset {
        x,
        y,
        z,
        true_weights: Some(w),
        ground_truth_null: !alternative || p.beta_xy == 0.0,
        x_kinds: vec![ColumnKind::Categorical],
        true_q: Some(TrueQ::Bernoulli { p: 0.5, d: 1 }),
        info: GenInfo::default(),
    })
}
