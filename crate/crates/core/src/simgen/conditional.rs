//! Conditional dependence without a causal effect.
//!
//! `Z ~ N(0, 1)` and `X ~ N(0, θ)` independently;
//! `V = Φ⁻¹(frac(Φ(Z) + X/β_YZ[1]))` and `Y = β_YZ[0]·V + ε`, `ε ~ N(0, 1)`.
//! For every fixed `x`, `Φ(Z) + x/β` is uniform modulo 1, so `Y` does not
//! depend on an intervention on `X`, while `X` and `Y` are dependent given
//! `Z`. `X ⊥ Z`, so the true weights are 1 with `q = N(0, θ)`.

use ndarray::Array2;

use super::{normal, ColumnKind, Dataset, GenInfo, GenParams, TrueQ};
use crate::error::{Error, Result};
use crate::rng::{child_rng, streams};
use crate::stats::{norm_cdf, norm_quantile};

pub fn gen_conditional_dep(p: &GenParams) -> Result<Dataset> {
    p.validate()?;
    p.require_univariate("conditional-dependence")?;
    let scale = p.beta_yz_at(1);
    if scale == 0.0 {
        return Err(Error::param("conditional-dependence generator needs beta_yz[1] ≠ 0"));
    }
    let effect = p.beta_yz_at(0);
    let sd = p.theta.sqrt();
    let mut rng = child_rng(p.seed, streams::GENERATOR);
    let mut x = Array2::zeros((p.n, 1));
    let mut y = Array2::zeros((p.n, 1));
    let mut z = Array2::zeros((p.n, 1));
    for i in 0..p.n {
        let zi = normal(&mut rng);
        let xi = sd * normal(&mut rng);
        let v = norm_quantile((norm_cdf(zi) + xi / scale).rem_euclid(1.0));
        z[[i, 0]] = zi;
        x[[i, 0]] = xi;
        y[[i, 0]] = effect * v + normal(&mut rng);
    }
    Ok(Dataset {
        x,
        y,
        z,
        true_weights: Some(vec![1.0; p.n]),
        ground_truth_null: true,
        x_kinds: vec![ColumnKind::Continuous],
        true_q: Some(TrueQ::Gaussian {
            phi: p.theta,
            s2: 0.0,
            d: 1,
        }),
        info: GenInfo::default(),
    })
}
