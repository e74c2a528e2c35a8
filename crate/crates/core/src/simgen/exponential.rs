//! Exponential marginals.
//!
//! `(Y₀, Z₀)` is a Gaussian pair with correlation `β_YZ[0]`, pushed through
//! the normal CDF and the Exp(1) quantile, so `Z ~ Exp(1)` and `Y` shares a
//! Gaussian copula with it. `X | Z` is exponential with mean
//! `φ(1 + β_XZ·Z)` and `Y = exp(β_XY·X)·E_Y` with `E_Y ~ Exp(1)` the
//! transformed `Y₀`. True weights use `q = Exp(mean θφ)`.

use ndarray::Array2;
use rand_distr::{Distribution, Exp};

use super::{normal, ColumnKind, Dataset, GenInfo, GenParams, TrueQ};
use crate::error::{Error, Result};
use crate::rng::{child_rng, streams};
use crate::stats::norm_cdf;

/// Largest copula correlation used; larger requests are clipped.
const MAX_CORRELATION: f64 = 0.999;

/// Exp(1) quantile of `Φ(g)`, computed from the upper tail for accuracy.
fn exp_from_normal(g: f64) -> f64 {
    -norm_cdf(-g).ln()
}

pub fn gen_exponential_marginal(p: &GenParams) -> Result<Dataset> {
    p.validate()?;
    p.require_univariate("exponential")?;
    if p.beta_xz < 0.0 {
        return Err(Error::param("exponential generator needs beta_xz ≥ 0"));
    }
    let requested = p.beta_yz_at(0);
    let rho = requested.clamp(-MAX_CORRELATION, MAX_CORRELATION);
    let q_mean = p.theta * p.phi;
    let unit = Exp::new(1.0).expect("rate 1");
    let mut rng = child_rng(p.seed, streams::GENERATOR);
    let mut x = Array2::zeros((p.n, 1));
    let mut y = Array2::zeros((p.n, 1));
    let mut z = Array2::zeros((p.n, 1));
    let mut w = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let z0 = normal(&mut rng);
        let y0 = rho * z0 + (1.0 - rho * rho).sqrt() * normal(&mut rng);
        let zi = exp_from_normal(z0);
        let m = p.phi * (1.0 + p.beta_xz * zi);
        let xi = m * unit.sample(&mut rng);
        z[[i, 0]] = zi;
        x[[i, 0]] = xi;
        y[[i, 0]] = (p.beta_xy * xi).exp() * exp_from_normal(y0);
        // q(x) / p(x | z) for exponentials with means q_mean and m
        w.push((m / q_mean) * (xi / m - xi / q_mean).exp());
    }
    Ok(Dataset {
        x,
        y,
        z,
        true_weights: Some(w),
        ground_truth_null: p.beta_xy == 0.0,
        x_kinds: vec![ColumnKind::Continuous],
        true_q: Some(TrueQ::Exponential { mean: q_mean }),
        info: GenInfo {
            covariance_projected: rho != requested,
            ..GenInfo::default()
        },
    })
}
