//! Mixed treatments: `w = [p(x_cat | x_cont) / p(x_cat | z, x_cont)] ·
//! [p(x_cont) / p(x_cont | z)]`, with `q = p`.

use ndarray::{concatenate, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::categorical::{block_product, train_blocks, CategoricalRatio};
use super::nce::{train_nce_q, train_tre_q, BridgeSchedule, NceModel, PairSet, TreModel};
use super::train::{ScorerSpec, TrainReport};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ContinuousFactor {
    Nce(NceModel),
    Tre(TreModel),
}

impl ContinuousFactor {
    pub fn log_weights(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            ContinuousFactor::Nce(m) => m.log_weights(x, z),
            ContinuousFactor::Tre(m) => m.log_weights(x, z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModel {
    pub cat_dim: usize,
    pub cont_dim: usize,
    pub z_dim: usize,
    pub categorical: Vec<CategoricalRatio>,
    pub continuous: ContinuousFactor,
}

impl MixedModel {
    /// The two factors separately: (categorical, continuous).
    pub fn factors(
        &self,
        x_cat: ArrayView2<f64>,
        x_cont: ArrayView2<f64>,
        z: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if x_cat.ncols() != self.cat_dim
            || x_cont.ncols() != self.cont_dim
            || z.ncols() != self.z_dim
        {
            return Err(Error::dims(format!(
                "model trained on {} categorical, {} continuous, {} confounder columns",
                self.cat_dim, self.cont_dim, self.z_dim
            )));
        }
        let zc = concatenate![Axis(1), z, x_cont];
        let cat = block_product(&self.categorical, x_cat, Some(x_cont), Some(zc.view()))?;
        let cont = self
            .continuous
            .log_weights(x_cont, z)?
            .into_iter()
            .map(f64::exp)
            .collect();
        Ok((cat, cont))
    }

    pub fn ratios(
        &self,
        x_cat: ArrayView2<f64>,
        x_cont: ArrayView2<f64>,
        z: ArrayView2<f64>,
    ) -> Result<Vec<f64>> {
        let (a, b) = self.factors(x_cat, x_cont, z)?;
        Ok(a.iter().zip(&b).map(|(u, v)| u * v).collect())
    }
}

/// Train both factors. `xq_cont` holds q-samples of the continuous block,
/// paired with `z` cyclically (see [`PairSet::product`]); `schedule =
/// Some(_)` selects TRE-q.
pub fn train_mixed(
    x_cat: ArrayView2<f64>,
    x_cont: ArrayView2<f64>,
    z: ArrayView2<f64>,
    xq_cont: ArrayView2<f64>,
    spec: &ScorerSpec,
    schedule: Option<&BridgeSchedule>,
) -> Result<(MixedModel, Vec<TrainReport>)> {
    if x_cat.ncols() == 0 || x_cont.ncols() == 0 {
        return Err(Error::param("mixed treatments need both a categorical and a continuous block"));
    }
    let n = x_cat.nrows();
    if x_cont.nrows() != n || z.nrows() != n {
        return Err(Error::dims("mixed inputs differ in row count"));
    }
    let zc = concatenate![Axis(1), z, x_cont];
    let (categorical, mut reports) = train_blocks(
        x_cat,
        Some(x_cont),
        zc.view(),
        spec,
        rng::derive_seed(spec.seed, 11),
    )?;
    let joint = PairSet::new(x_cont.to_owned(), z.to_owned())?;
    let product = PairSet::product(xq_cont.to_owned(), z)?;
    let continuous = match schedule {
        None => {
            let (m, r) = train_nce_q(&joint, &product, spec)?;
            reports.push(r);
            ContinuousFactor::Nce(m)
        }
        Some(s) => {
            let (m, r) = train_tre_q(&joint, &product, s, spec)?;
            reports.extend(r);
            ContinuousFactor::Tre(m)
        }
    };
    Ok((
        MixedModel {
            cat_dim: x_cat.ncols(),
            cont_dim: x_cont.ncols(),
            z_dim: z.ncols(),
            categorical,
            continuous,
        },
        reports,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn prediction_is_product_of_factors() {
        let n = 120;
        let x_cat = Array2::from_shape_fn((n, 1), |(i, _)| (i % 2) as f64);
        let x_cont = Array2::from_shape_fn((n, 1), |(i, _)| ((i * 37) % 17) as f64 / 17.0);
        let z = Array2::from_shape_fn((n, 1), |(i, _)| ((i * 11) % 13) as f64 / 13.0);
        let xq = Array2::from_shape_fn((n, 1), |(i, _)| ((i * 5) % 17) as f64 / 17.0);
        let spec = ScorerSpec {
            max_epochs: 3,
            ..ScorerSpec::default()
        };
        let (m, _) = train_mixed(x_cat.view(), x_cont.view(), z.view(), xq.view(), &spec, None)
            .unwrap();
        let (a, b) = m.factors(x_cat.view(), x_cont.view(), z.view()).unwrap();
        let w = m.ratios(x_cat.view(), x_cont.view(), z.view()).unwrap();
        for i in 0..n {
            assert_eq!(w[i], a[i] * b[i]);
        }
    }

    #[test]
    fn empty_block_rejected() {
        let e = Array2::<f64>::zeros((4, 0));
        let x = Array2::<f64>::zeros((4, 1));
        assert!(train_mixed(e.view(), x.view(), x.view(), x.view(), &ScorerSpec::default(), None)
            .is_err());
    }
}
