//! Choice of the q marginal for X and q-sample generation.
//!
//! For Gaussian data, scaling x by `c_q` trades off how far q sits from the
//! conditional `p(x|z)`. The univariate optimum is `c_q = √(1 − 2ρ²)`; in
//! several dimensions the scaling is found numerically with `T = c·I`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// How q-samples are produced from the observed x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum QMode {
    /// `q = p`: with-replacement resample of observed rows.
    Resample,
    /// `x^q = c·x` applied to a with-replacement resample.
    Scale { c: f64 },
    /// `x^q = x`, row for row. Only meaningful with unit weights, where it
    /// turns the weighted statistic into plain HSIC.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSpec {
    pub mode: QMode,
    pub seed: u64,
}

impl QSpec {
    pub fn validate(&self) -> Result<()> {
        if let QMode::Scale { c } = self.mode {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::param(format!("c_q must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Draw q-samples for the rows of `x`.
pub fn sample_q(x: ArrayView2<f64>, spec: &QSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("X for q-sampling"));
    }
    match spec.mode {
        QMode::Identity => Ok(x.to_owned()),
        QMode::Resample => Ok(scale_rows(x, 1.0, &resample_indices(n, spec.seed))),
        QMode::Scale { c } => Ok(scale_rows(x, c, &resample_indices(n, spec.seed))),
    }
}

/// Seeded with-replacement row indices.
pub fn resample_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::rng_from(seed);
    (0..n).map(|_| r.random_range(0..n)).collect()
}

/// `c · x[idx[i]]` for each `i`.
pub fn scale_rows(x: ArrayView2<f64>, c: f64, idx: &[usize]) -> Array2<f64> {
    let mut out = x.select(Axis(0), idx);
    if c != 1.0 {
        out.mapv_inplace(|v| c * v);
    }
    out
}

/// Optimal univariate scaling `√(1 − 2ρ²)`.
pub fn optimal_cq_univariate(rho: f64) -> Result<f64> {
    let v = 1.0 - 2.0 * rho * rho;
    if !rho.is_finite() || v <= 0.0 {
        return Err(Error::Domain(format!(
            "ρ = {rho}: 1 − 2ρ² = {v} is not positive"
        )));
    }
    Ok(v.sqrt())
}

/// Cross-covariance of whitened X and Z.
#[derive(Debug, Clone, PartialEq)]
pub struct CovBlocks {
    pub sigma_xz: DMatrix<f64>,
}

/// Matrices derived from `Σ_xz` that the objective needs.
struct Derived {
    /// `(I − Σ_xz Σ_zx)⁻¹ + B D⁻¹ Bᵀ`
    a0: DMatrix<f64>,
    log_det_d: f64,
}

impl CovBlocks {
    pub fn new(sigma_xz: DMatrix<f64>) -> Result<Self> {
        if sigma_xz.nrows() == 0 || sigma_xz.ncols() == 0 {
            return Err(Error::Empty("Σ_xz"));
        }
        if sigma_xz.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Σ_xz"));
        }
        Ok(Self { sigma_xz })
    }

    pub fn p(&self) -> usize {
        self.sigma_xz.nrows()
    }

    /// Estimate from data after whitening each block to zero mean and
    /// identity covariance.
    pub fn estimate(x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::dims("X and Z row counts differ"));
        }
        if x.nrows() < 3 {
            return Err(Error::param("need at least 3 rows to estimate Σ_xz"));
        }
        let xw = whiten(x)?;
        let zw = whiten(z)?;
        let n = x.nrows() as f64;
        let s = xw.transpose() * &zw / (n - 1.0);
        Self::new(s)
    }

    fn derived(&self) -> Result<Derived> {
        let p = self.p();
        let q = self.sigma_xz.ncols();
        let s = &self.sigma_xz;
        let a = DMatrix::<f64>::identity(p, p) - s * s.transpose();
        let a_inv = spd_inverse(&a)
            .ok_or_else(|| Error::Domain("I − Σ_xz Σ_zx is not positive definite".into()))?;
        let b = &a_inv * s;
        let d = DMatrix::<f64>::identity(q, q) - s.transpose() * &a_inv * s;
        let d = symmetrize(&d);
        let d_chol = d
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("D is not positive definite".into()))?;
        let log_det_d = 2.0 * d_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d_inv = d_chol.inverse();
        let a0 = symmetrize(&(&a_inv + &b * d_inv * b.transpose()));
        Ok(Derived { a0, log_det_d })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    symmetrize(m).cholesky().map(|c| c.inverse())
}

/// Center the columns of `x` and multiply by `Σ^{-1/2}`.
fn whiten(x: ArrayView2<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.dim();
    let mean = x.mean_axis(Axis(0)).ok_or(Error::Empty("whiten input"))?;
    let centered = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - mean[j]);
    let cov = symmetrize(&(centered.transpose() * &centered / (n as f64 - 1.0)));
    let eig = SymmetricEigen::new(cov);
    let max_ev = eig.eigenvalues.max();
    if !(max_ev > 0.0) || eig.eigenvalues.iter().any(|&v| v <= 1e-12 * max_ev) {
        return Err(Error::Domain("covariance is singular; cannot whiten".into()));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    Ok(centered * w)
}

/// `det(T)² · det(D) · det(2T⁻¹ − (I − Σ_xz Σ_zx)⁻¹ − B D⁻¹ Bᵀ)`.
pub fn multivariate_objective(t: &DMatrix<f64>, blocks: &CovBlocks) -> Result<f64> {
    let p = blocks.p();
    if t.nrows() != p || t.ncols() != p {
        return Err(Error::dims(format!("T must be {p}×{p}")));
    }
    let t_chol = symmetrize(t)
        .cholesky()
        .ok_or_else(|| Error::Domain("T is not positive definite".into()))?;
    let det_t = t_chol.determinant();
    let der = blocks.derived()?;
    let inner = symmetrize(&(t_chol.inverse() * 2.0 - &der.a0));
    let inner_chol = inner.cholesky().ok_or_else(|| {
        Error::Domain("2T⁻¹ − (I − Σ_xz Σ_zx)⁻¹ − BD⁻¹Bᵀ is not positive definite".into())
    })?;
    Ok(det_t * det_t * der.log_det_d.exp() * inner_chol.determinant())
}

/// Result of the scalar search over `T = c·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqOptimum {
    /// Sample scaling `√c`.
    pub scaling: f64,
    /// Optimal `c` (the variance scale).
    pub c: f64,
    pub log_objective: f64,
    pub iterations: usize,
}

pub const MAX_ITERATIONS: usize = 500;
pub const TOLERANCE: f64 = 1e-9;

/// Maximize the objective over `T = c·I` by gradient ascent in `s = ln c`.
///
/// Returns `√c`, the factor by which samples are scaled.
pub fn optimal_cq_multivariate(blocks: &CovBlocks) -> Result<f64> {
    Ok(optimize_cq(blocks)?.scaling)
}

pub fn optimize_cq(blocks: &CovBlocks) -> Result<CqOptimum> {
    let p = blocks.p() as f64;
    let der = blocks.derived()?;
    let lambdas: Vec<f64> = SymmetricEigen::new(der.a0.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    let lambda_max = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_max > 0.0) {
        return Err(Error::Domain("degenerate objective".into()));
    }
    // ln f(c) for T = cI; eigenvalues of 2/c·I − A0 are 2/c − λᵢ
    let log_f = |s: f64| -> Option<f64> {
        let c = s.exp();
        let mut acc = 2.0 * p * s + der.log_det_d;
        for &l in &lambdas {
            let v = 2.0 / c - l;
            if v <= 0.0 {
                return None;
            }
            acc += v.ln();
        }
        Some(acc)
    };
    let grad = |s: f64| -> f64 {
        let c = s.exp();
        2.0 * p - lambdas.iter().map(|&l| 2.0 / (2.0 - c * l)).sum::<f64>()
    };

    let mut s = (1.0f64).min(1.0 / lambda_max).ln();
    let mut f = log_f(s).ok_or_else(|| Error::Domain("empty objective domain".into()))?;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let g = grad(s);
        if g == 0.0 {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let s_new = s + step * g;
            if let Some(f_new) = log_f(s_new) {
                if f_new >= f + 1e-4 * step * g * g {
                    accepted = Some((s_new, f_new));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((s_new, f_new)) = accepted else { break };
        let delta = (f_new - f).abs() / f.abs().max(1.0);
        s = s_new;
        f = f_new;
        if delta < TOLERANCE {
            break;
        }
    }
    let c = s.exp();
    Ok(CqOptimum {
        scaling: c.sqrt(),
        c,
        log_objective: f,
        iterations,
    })
}
